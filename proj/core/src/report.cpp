#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "peso/harness.hpp"

namespace peso {

namespace {

using nlohmann::json;

std::string fmt_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

json train_log_to_json(const TrainLog& log) {
    json epochs = json::array();
    for (const EpochLog& e : log.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"reg_value", e.reg_value},
                          {"val_loss", e.val_loss}});
    return epochs;
}

TrainLog train_log_from_json(const json& j) {
    TrainLog log;
    for (const json& e : j) {
        EpochLog el;
        el.epoch = e.at("epoch").get<std::size_t>();
        el.train_loss = e.at("train_loss").get<double>();
        el.reg_value = e.at("reg_value").get<double>();
        el.val_loss = e.at("val_loss").get<double>();
        log.epochs.push_back(el);
    }
    return log;
}

// Splits "hit@5" into ("hit", "5") for the CSV's metric and k columns.
std::pair<std::string, std::string> split_metric_key(const std::string& key) {
    const std::size_t at = key.find('@');
    if (at == std::string::npos) return {key, ""};
    return {key.substr(0, at), key.substr(at + 1)};
}

}  // namespace

std::map<std::string, double> recompute_cross_stage_mean(const RunReport& report) {
    std::map<std::string, double> mean;
    if (report.stages.empty()) return mean;
    for (const StageResult& s : report.stages)
        for (const auto& [key, value] : s.test_metrics) mean[key] += value;
    for (auto& [key, value] : mean) value /= static_cast<double>(report.stages.size());
    return mean;
}

std::string report_to_json(const RunReport& report) {
    json j;
    j["config"] = json::parse(report.config_json);
    j["method"] = report.method;
    j["seed"] = report.seed;
    j["wall_clock_sec"] = report.wall_clock_sec;
    j["pretrain_log"] = train_log_to_json(report.pretrain_log);
    json stages = json::array();
    for (const StageResult& s : report.stages) {
        json stage;
        stage["stage"] = s.stage;
        stage["test_metrics"] = s.test_metrics;
        stage["val_metrics"] = s.val_metrics;
        stage["train_log"] = train_log_to_json(s.train_log);
        stages.push_back(std::move(stage));
    }
    j["stages"] = std::move(stages);
    j["cross_stage_mean"] = report.cross_stage_mean;
    return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("report is not valid JSON: ") + e.what());
    }
    RunReport report;
    report.config_json = j.at("config").dump(2);
    report.method = j.at("method").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.wall_clock_sec = j.at("wall_clock_sec").get<double>();
    report.pretrain_log = train_log_from_json(j.at("pretrain_log"));
    for (const json& s : j.at("stages")) {
        StageResult sr;
        sr.stage = s.at("stage").get<std::size_t>();
        sr.test_metrics = s.at("test_metrics").get<std::map<std::string, double>>();
        sr.val_metrics = s.at("val_metrics").get<std::map<std::string, double>>();
        sr.train_log = train_log_from_json(s.at("train_log"));
        report.stages.push_back(std::move(sr));
    }
    report.cross_stage_mean = j.at("cross_stage_mean").get<std::map<std::string, double>>();
    return report;
}

std::string metrics_csv(const RunReport& report) {
    std::ostringstream out;
    out << "stage,method,metric,k,value\n";
    for (const StageResult& s : report.stages) {
        for (const auto& [key, value] : s.test_metrics) {
            const auto [metric, k] = split_metric_key(key);
            out << s.stage << ',' << report.method << ',' << metric << ',' << k << ','
                << fmt_value(value) << '\n';
        }
    }
    for (const auto& [key, value] : report.cross_stage_mean) {
        const auto [metric, k] = split_metric_key(key);
        out << "mean," << report.method << ',' << metric << ',' << k << ',' << fmt_value(value)
            << '\n';
    }
    return out.str();
}

std::string sweep_summary_csv(const SweepResult& sweep) {
    std::ostringstream out;
    out << "lambda,lr_scale,metric,mean,stddev,n_seeds\n";
    for (const SweepSummaryRow& row : sweep.summary)
        out << fmt_value(row.lambda) << ',' << fmt_value(row.lr_scale) << ',' << row.metric << ','
            << fmt_value(row.mean) << ',' << fmt_value(row.stddev) << ',' << row.n_seeds << '\n';
    return out.str();
}

}  // namespace peso
