#include "peso/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "peso/adapters.hpp"
#include "peso/rng.hpp"

namespace peso {

namespace {

using nlohmann::json;

void require_known_keys(const json& j, const std::vector<std::string>& known,
                        const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const std::string& k : known)
            if (key == k) ok = true;
        if (!ok) throw ConfigError("unknown config key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace

const std::vector<std::string>& method_matrix() {
    static const std::vector<std::string> methods = {
        "pretrain_only",   "single_evolving",    "sum_all",          "sum_latest",
        "sum_all_inherit", "sum_latest_inherit", "sd_all",           "sd_latest",
        "sd_all_inherit",  "sd_latest_inherit",  "inf_all",          "inf_latest",
        "inf_all_inherit", "inf_latest_inherit", "peso",
    };
    return methods;
}

bool is_valid_method(const std::string& method) {
    for (const std::string& m : method_matrix())
        if (m == method) return true;
    return false;
}

ExperimentConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ExperimentConfig c;
    require_known_keys(j,
                       {"data", "model", "method", "train", "sd_alpha_mode", "trim_history",
                        "sweep", "out_dir", "save_checkpoints"},
                       "top level");

    if (j.contains("data")) {
        const json& d = j.at("data");
        require_known_keys(d,
                           {"source", "drift", "csv_path", "split", "stages", "pretrain_frac",
                            "window", "min_interactions", "csv_clusters"},
                           "data");
        read(d, "source", c.data.source);
        if (c.data.source != "drift" && c.data.source != "csv")
            throw ConfigError("data.source must be 'drift' or 'csv'");
        if (d.contains("drift")) {
            const json& g = d.at("drift");
            require_known_keys(g,
                               {"users", "items", "clusters", "alpha", "dirichlet_conc",
                                "stage1_per_user", "incr_per_user"},
                               "data.drift");
            read(g, "users", c.data.drift.users);
            read(g, "items", c.data.drift.items);
            read(g, "clusters", c.data.drift.clusters);
            read(g, "alpha", c.data.drift.alpha);
            read(g, "dirichlet_conc", c.data.drift.dirichlet_conc);
            read(g, "stage1_per_user", c.data.drift.stage1_per_user);
            read(g, "incr_per_user", c.data.drift.incr_per_user);
        }
        read(d, "csv_path", c.data.csv_path);
        read(d, "split", c.data.split);
        if (c.data.split != "chronological" && c.data.split != "user_disjoint")
            throw ConfigError("data.split must be 'chronological' or 'user_disjoint'");
        read(d, "stages", c.data.stages);
        read(d, "pretrain_frac", c.data.pretrain_frac);
        read(d, "window", c.data.window);
        read(d, "min_interactions", c.data.min_interactions);
        read(d, "csv_clusters", c.data.csv_clusters);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        require_known_keys(
            m, {"hidden", "rank", "code_len", "codebook", "beam_width", "top_k", "eval_validation"},
            "model");
        read(m, "hidden", c.model.hidden);
        read(m, "rank", c.model.rank);
        read(m, "code_len", c.model.code_len);
        read(m, "codebook", c.model.codebook);
        read(m, "beam_width", c.model.beam_width);
        read(m, "top_k", c.model.top_k);
        read(m, "eval_validation", c.model.eval_validation);
    }

    read(j, "method", c.method);
    if (!is_valid_method(c.method)) throw ConfigError("unknown method id '" + c.method + "'");

    if (j.contains("train")) {
        const json& t = j.at("train");
        require_known_keys(t,
                           {"lr", "lr_scale", "epochs", "batch_size", "lambda", "regularizer",
                            "seed", "output_kl_probe_cap", "divergence_threshold"},
                           "train");
        read(t, "lr", c.train.lr);
        read(t, "lr_scale", c.train.lr_scale);
        read(t, "epochs", c.train.epochs);
        read(t, "batch_size", c.train.batch_size);
        read(t, "lambda", c.train.lambda);
        if (t.contains("regularizer"))
            c.train.regularizer = parse_regularizer(t.at("regularizer").get<std::string>());
        read(t, "seed", c.train.seed);
        read(t, "output_kl_probe_cap", c.train.output_kl_probe_cap);
        read(t, "divergence_threshold", c.train.divergence_threshold);
        if (c.train.lr <= 0.0) throw ConfigError("train.lr must be positive");
        if (c.train.lambda < 0.0) throw ConfigError("train.lambda must be nonnegative");
        if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    }

    read(j, "sd_alpha_mode", c.sd_alpha_mode);
    if (c.sd_alpha_mode != "paper" && c.sd_alpha_mode != "preserve")
        throw ConfigError("sd_alpha_mode must be 'paper' or 'preserve'");
    read(j, "trim_history", c.trim_history);

    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        require_known_keys(s, {"lambda_values", "lr_scales", "seeds"}, "sweep");
        read(s, "lambda_values", c.sweep.lambda_values);
        read(s, "lr_scales", c.sweep.lr_scales);
        read(s, "seeds", c.sweep.seeds);
    }

    read(j, "out_dir", c.out_dir);
    read(j, "save_checkpoints", c.save_checkpoints);
    return c;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["data"]["source"] = c.data.source;
    j["data"]["drift"] = {
        {"users", c.data.drift.users},
        {"items", c.data.drift.items},
        {"clusters", c.data.drift.clusters},
        {"alpha", c.data.drift.alpha},
        {"dirichlet_conc", c.data.drift.dirichlet_conc},
        {"stage1_per_user", c.data.drift.stage1_per_user},
        {"incr_per_user", c.data.drift.incr_per_user},
    };
    j["data"]["csv_path"] = c.data.csv_path;
    j["data"]["split"] = c.data.split;
    j["data"]["stages"] = c.data.stages;
    j["data"]["pretrain_frac"] = c.data.pretrain_frac;
    j["data"]["window"] = c.data.window;
    j["data"]["min_interactions"] = c.data.min_interactions;
    j["data"]["csv_clusters"] = c.data.csv_clusters;

    j["model"] = {
        {"hidden", c.model.hidden},         {"rank", c.model.rank},
        {"code_len", c.model.code_len},     {"codebook", c.model.codebook},
        {"beam_width", c.model.beam_width}, {"top_k", c.model.top_k},
        {"eval_validation", c.model.eval_validation},
    };

    j["method"] = c.method;
    j["train"] = {
        {"lr", c.train.lr},
        {"lr_scale", c.train.lr_scale},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lambda", c.train.lambda},
        {"regularizer", regularizer_name(c.train.regularizer)},
        {"seed", c.train.seed},
        {"output_kl_probe_cap", c.train.output_kl_probe_cap},
        {"divergence_threshold", c.train.divergence_threshold},
    };
    j["sd_alpha_mode"] = c.sd_alpha_mode;
    j["trim_history"] = c.trim_history;
    j["sweep"] = {
        {"lambda_values", c.sweep.lambda_values},
        {"lr_scales", c.sweep.lr_scales},
        {"seeds", c.sweep.seeds},
    };
    j["out_dir"] = c.out_dir;
    j["save_checkpoints"] = c.save_checkpoints;
    return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    return fnv1a64(config_to_json(config));
}

DriftSpec drift_spec_from_config(const DataConfig& data, std::uint64_t seed) {
    DriftSpec spec;
    spec.n_clusters = data.drift.clusters;
    spec.users = data.drift.users;
    spec.items = data.drift.items;
    spec.dirichlet_conc = data.drift.dirichlet_conc;
    spec.seed = seed;
    spec.alpha.assign(data.stages, data.drift.alpha);
    spec.stage_sizes.resize(data.stages);
    for (std::size_t t = 0; t < data.stages; ++t)
        spec.stage_sizes[t] =
            data.drift.users * (t == 0 ? data.drift.stage1_per_user : data.drift.incr_per_user);
    return spec;
}

}  // namespace peso
