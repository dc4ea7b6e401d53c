#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peso/data.hpp"
#include "peso/model.hpp"

namespace peso {

struct DriftConfig {
    std::size_t users = 2000;
    std::size_t items = 256;
    std::size_t clusters = 16;
    double alpha = 0.7;
    double dirichlet_conc = 0.3;
    std::size_t stage1_per_user = 36;
    std::size_t incr_per_user = 6;
};

struct DataConfig {
    std::string source = "drift";  // "drift" | "csv"
    DriftConfig drift;
    std::string csv_path;
    std::string split = "chronological";  // | "user_disjoint"
    std::size_t stages = 5;
    double pretrain_frac = 0.6;
    std::size_t window = 20;
    std::size_t min_interactions = 5;
    std::size_t csv_clusters = 8;  // hash buckets standing in for item clusters
};

struct ModelSection {
    std::size_t hidden = 32;
    std::size_t rank = 4;
    std::size_t code_len = 4;
    std::size_t codebook = 16;
    std::size_t beam_width = 20;
    std::size_t top_k = 10;
    bool eval_validation = false;
};

struct SweepSection {
    std::vector<double> lambda_values;
    std::vector<double> lr_scales;
    std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
    DataConfig data;
    ModelSection model;
    std::string method = "peso";
    TrainConfig train;
    std::string sd_alpha_mode = "paper";  // | "preserve"
    bool trim_history = false;
    SweepSection sweep;
    std::string out_dir = "out";
    bool save_checkpoints = false;
};

/// The 15 reachable method ids: pretrain_only, single_evolving, the twelve
/// sum/sd/inf × all/latest × ±inherit variants, and peso.
const std::vector<std::string>& method_matrix();
bool is_valid_method(const std::string& method);

/// Parses the JSON config dialect. Unknown keys and invalid enum values are
/// ConfigErrors; omitted keys take defaults.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical serialization; parse ∘ serialize is the identity.
std::string config_to_json(const ExperimentConfig& config);

std::uint64_t config_hash(const ExperimentConfig& config);

/// DriftSpec expansion: stage 1 gets stage1_per_user interactions per user,
/// every later stage incr_per_user, all stages sharing `alpha`.
DriftSpec drift_spec_from_config(const DataConfig& data, std::uint64_t seed);

}  // namespace peso
