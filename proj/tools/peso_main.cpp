// Experiment CLI: data generation, splitting, stagewise training, evaluation,
// sweeps, theory certification, and report post-processing.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "peso/harness.hpp"
#include "peso/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRunFailure = 2;
constexpr int kExitCertifyFailure = 3;

int log_level() {
    const char* env = std::getenv("PESO_CL_LOG");
    if (!env) return 1;
    try {
        return std::stoi(env);
    } catch (...) {
        return 1;
    }
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[peso] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[peso:debug] " << msg << "\n";
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

peso::ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                                   bool has_seed) {
    peso::ExperimentConfig config =
        path.empty() ? peso::ExperimentConfig{} : peso::load_config_file(path);
    if (has_seed) config.train.seed = seed_override;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PESO continual low-rank adaptation experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t jobs = 1;
    std::string out_dir;

    app.add_option("--config", config_path, "Path to the JSON experiment config");
    app.add_option("--seed", seed, "Override train.seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--jobs", jobs, "Worker pool size for sweeps");
    app.add_option("--out", out_dir, "Override the output directory");

    auto* cmd_generate = app.add_subcommand("generate", "Generate drifting-preference data as CSV");
    auto* cmd_split = app.add_subcommand("split", "Split a log into stage blocks and report sizes");
    auto* cmd_train = app.add_subcommand("train", "Run the full stage pipeline for one method");
    auto* cmd_evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on stage blocks");
    auto* cmd_sweep = app.add_subcommand("sweep", "Cartesian lambda x lr_scale x seed sweep");
    auto* cmd_certify = app.add_subcommand("certify", "Run the theory certificate suite");
    auto* cmd_report = app.add_subcommand("report", "Recompute cross-stage averages from a report");

    std::string checkpoint_path;
    std::size_t eval_stage = 0;
    cmd_evaluate->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    cmd_evaluate->add_option("--stage", eval_stage, "Stage to evaluate (0 = all continual)");

    std::string report_path;
    cmd_report->add_option("--in", report_path, "Run report JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_certify->parsed()) {
            const peso::CertifyReport report = peso::certify();
            const std::string json_text = peso::certify_report_json(report);
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                write_file(out_dir + "/certify.json", json_text);
            }
            std::cout << json_text << "\n";
            for (const peso::CertifyCheck& c : report.checks)
                log_info(c.name + (c.pass ? " PASS" : " FAIL") +
                         " (max_err=" + std::to_string(c.max_err) + ")");
            return report.all_pass() ? kExitOk : kExitCertifyFailure;
        }

        peso::ExperimentConfig config;
        try {
            config = load_config(config_path, seed, seed_set);
            if (!out_dir.empty()) config.out_dir = out_dir;
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitConfigError;
        }
        std::filesystem::create_directories(config.out_dir);

        if (cmd_generate->parsed()) {
            const peso::DriftResult drift = peso::generate_drift(
                peso::drift_spec_from_config(config.data, config.train.seed));
            const std::string path = config.out_dir + "/interactions.csv";
            peso::write_csv(drift.log, path);
            log_info("wrote " + std::to_string(drift.log.records.size()) + " interactions to " +
                     path);
            return kExitOk;
        }

        if (cmd_split->parsed()) {
            const peso::StagePrep prep = peso::prepare_data(config);
            nlohmann::json j = nlohmann::json::array();
            for (const peso::StageBlock& block : prep.blocks) {
                j.push_back({{"stage", block.stage_index},
                             {"train_pairs", block.pairs.size()},
                             {"val_pairs", block.val_pairs.size()},
                             {"test_pairs", block.test_pairs.size()}});
                log_debug("stage " + std::to_string(block.stage_index) + ": " +
                          std::to_string(block.pairs.size()) + " train pairs");
            }
            const std::string path = config.out_dir + "/split.json";
            write_file(path, j.dump(2));
            std::cout << j.dump(2) << "\n";
            return kExitOk;
        }

        if (cmd_train->parsed()) {
            log_info("training method " + config.method + " with seed " +
                     std::to_string(config.train.seed));
            const peso::RunReport report = peso::run_pipeline(config);
            write_file(config.out_dir + "/report.json", peso::report_to_json(report));
            write_file(config.out_dir + "/metrics.csv", peso::metrics_csv(report));
            log_info("report written to " + config.out_dir + "/report.json");
            return kExitOk;
        }

        if (cmd_evaluate->parsed()) {
            const peso::Checkpoint ckpt =
                peso::checkpoint_load(checkpoint_path, peso::config_hash(config));
            const peso::StagePrep prep = peso::prepare_data(config);
            peso::EvalOptions opts;
            opts.beam_width = config.model.beam_width;
            opts.top_k = config.model.top_k;
            std::ostringstream csv;
            csv << "stage,method,metric,k,value\n";
            for (const peso::StageBlock& block : prep.blocks) {
                if (block.stage_index < 2) continue;
                if (eval_stage != 0 && block.stage_index != eval_stage) continue;
                const auto metrics =
                    peso::evaluate_block(ckpt.model, ckpt.stacks, prep.book, block, opts);
                for (const auto& [key, value] : metrics) {
                    const std::size_t at = key.find('@');
                    csv << block.stage_index << ',' << config.method << ','
                        << key.substr(0, at) << ',' << key.substr(at + 1) << ',' << value << '\n';
                }
            }
            write_file(config.out_dir + "/evaluate.csv", csv.str());
            std::cout << csv.str();
            return kExitOk;
        }

        if (cmd_sweep->parsed()) {
            log_info("sweep with " + std::to_string(jobs) + " jobs");
            const peso::SweepResult sweep = peso::run_sweep(config, jobs);
            write_file(config.out_dir + "/sweep_summary.csv", peso::sweep_summary_csv(sweep));
            std::size_t idx = 0;
            bool any_failed = false;
            for (const peso::SweepCell& cell : sweep.cells) {
                const std::string tag = "cell" + std::to_string(idx++);
                if (cell.ok) {
                    write_file(config.out_dir + "/" + tag + "_report.json",
                               peso::report_to_json(cell.report));
                } else {
                    any_failed = true;
                    log_info(tag + " FAILED: " + cell.error);
                }
            }
            std::cout << peso::sweep_summary_csv(sweep);
            return any_failed ? kExitRunFailure : kExitOk;
        }

        if (cmd_report->parsed()) {
            std::ifstream in(report_path);
            if (!in) throw peso::ConfigError("cannot open report " + report_path);
            std::stringstream ss;
            ss << in.rdbuf();
            const peso::RunReport report = peso::report_from_json(ss.str());
            const auto recomputed = peso::recompute_cross_stage_mean(report);
            std::ostringstream csv;
            csv << "method,metric,k,value\n";
            for (const auto& [key, value] : recomputed) {
                const std::size_t at = key.find('@');
                csv << report.method << ',' << key.substr(0, at) << ',' << key.substr(at + 1)
                    << ',' << value << '\n';
            }
            write_file(config.out_dir + "/cross_stage.csv", csv.str());
            std::cout << csv.str();
            return kExitOk;
        }
    } catch (const peso::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "run failure: " << e.what() << "\n";
        return kExitRunFailure;
    }
    return kExitOk;
}
