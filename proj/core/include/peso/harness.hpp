#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peso/config.hpp"
#include "peso/decode_eval.hpp"
#include "peso/model.hpp"

namespace peso {

struct StageResult {
    std::size_t stage = 0;
    std::map<std::string, double> test_metrics;
    std::map<std::string, double> val_metrics;  // filled when eval_validation is on
    TrainLog train_log;
};

struct RunReport {
    std::string config_json;  // verbatim canonical config
    std::string method;
    std::uint64_t seed = 0;
    TrainLog pretrain_log;
    std::vector<StageResult> stages;                 // continual stages 2..T
    std::map<std::string, double> cross_stage_mean;  // arithmetic mean over stages
    double wall_clock_sec = 0.0;
};

/// Deterministic data preparation shared by every method at a given seed.
struct StagePrep {
    CodeBook book;
    std::vector<StageBlock> blocks;
};
StagePrep prepare_data(const ExperimentConfig& config);

/// Stage-1 pretraining state; identical across methods for one seed because
/// policies only differ from stage 2 on.
struct Stage1State {
    ToyRecModel model;
    std::vector<LoraAdapter> trained_live;  // per site, in stack order
    TrainLog log;
};
Stage1State run_stage1(const ExperimentConfig& config, const StagePrep& prep);

/// Report plus the final parameter state, for resume checks and evaluation.
struct PipelineOutcome {
    RunReport report;
    ToyRecModel model;
    std::vector<AdapterStack> stacks;
    ParamVector v_prev;
};

/// Continual stages 2..T for the configured method, starting from shared
/// stage-1 state. Evaluates each stage's test pairs after training it.
PipelineOutcome run_continual(const ExperimentConfig& config, const StagePrep& prep,
                              const Stage1State& stage1);

/// Full pipeline: prepare → pretrain → continual stages → report.
RunReport run_pipeline(const ExperimentConfig& config);
PipelineOutcome run_pipeline_outcome(const ExperimentConfig& config);

/// One sweep cell and its outcome; failed cells carry the error text.
struct SweepCell {
    double lambda = 0.0;
    double lr_scale = 0.0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    RunReport report;
};

struct SweepSummaryRow {
    double lambda = 0.0;
    double lr_scale = 0.0;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n_seeds = 0;
};

struct SweepResult {
    std::vector<SweepCell> cells;           // deterministic cell order
    std::vector<SweepSummaryRow> summary;   // mean ± std over seeds per (λ, lr*)
};

/// Cartesian λ × lr_scale × seed sweep on a bounded worker pool. Cell
/// failures are recorded and the remaining cells continue.
SweepResult run_sweep(const ExperimentConfig& config, std::size_t jobs = 1);

// --- checkpointing -------------------------------------------------------

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::size_t completed_stage = 0;  // stages 1..completed_stage are done
    std::string rng_state;            // stream derivation marker
    ToyRecModel model;
    std::vector<AdapterStack> stacks;
    ParamVector v_prev;
};

void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
/// Throws CheckpointError on corruption or when expected_config_hash differs.
Checkpoint checkpoint_load(const std::string& path, std::uint64_t expected_config_hash);

/// Resumes a pipeline from `ckpt`, running stages completed_stage+1 .. T.
/// Final parameters are bit-identical to the uninterrupted run; the returned
/// report covers only the resumed stages.
PipelineOutcome resume_pipeline(const ExperimentConfig& config, const Checkpoint& ckpt);

// --- certification -------------------------------------------------------

struct CertifyCheck {
    std::string name;
    double max_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct CertifyOptions {
    // Test-only fault injection: flips the sign of the closed-form minimizer
    // inside the interpolation certificate, which must turn it red.
    bool inject_closed_form_sign_flip = false;
    std::uint64_t seed = 20240901;
};

struct CertifyReport {
    std::vector<CertifyCheck> checks;
    bool all_pass() const;
};

/// Runs the full certificate fixture set: interpolation identity, L2
/// corollary, local-quadratic softmax-KL law, variance identity, and the
/// descent/closed-form bridge.
CertifyReport certify(const CertifyOptions& options = {});
std::string certify_report_json(const CertifyReport& report);

// --- report serialization -------------------------------------------------

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

/// Metric table rows `stage,method,metric,k,value`, cross-stage means last
/// with stage column "mean".
std::string metrics_csv(const RunReport& report);

/// Plot-ready sweep table `lambda,lr_scale,metric,mean,stddev,n_seeds`.
std::string sweep_summary_csv(const SweepResult& sweep);

/// Mean over the report's stage rows for the named metric; the recomputation
/// used by report-integrity checks and the `report` subcommand.
std::map<std::string, double> recompute_cross_stage_mean(const RunReport& report);

}  // namespace peso
