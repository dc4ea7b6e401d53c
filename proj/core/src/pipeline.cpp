#include <chrono>
#include <filesystem>

#include "peso/harness.hpp"
#include "peso/rng.hpp"

namespace peso {

namespace {

std::vector<std::size_t> hash_bucket_clusters(std::size_t n_items, std::size_t buckets,
                                              std::uint64_t seed) {
    std::vector<std::size_t> clusters(n_items);
    for (std::size_t i = 0; i < n_items; ++i)
        clusters[i] = splitmix64(seed ^ splitmix64(i + 1)) % buckets;
    return clusters;
}

SealOptions seal_options(const ExperimentConfig& config) {
    SealOptions opts;
    opts.sd_alpha_mode = config.sd_alpha_mode == "preserve" ? SdAlphaMode::FunctionPreserve
                                                            : SdAlphaMode::PaperInit;
    opts.trim_history = config.trim_history;
    return opts;
}

Policy method_policy(const std::string& method) {
    if (method == "pretrain_only") return Policy::SingleEvolving;  // never trained past stage 1
    return parse_policy(method);
}

// Baselines train unregularized; only PESO carries its λ and kind.
TrainConfig stage_train_config(const ExperimentConfig& config) {
    TrainConfig tc = config.train;
    if (config.method != "peso") tc.lambda = 0.0;
    return tc;
}

struct ContinualState {
    ToyRecModel model;
    std::vector<AdapterStack> stacks;
    ParamVector v_prev;
    std::size_t next_stage = 2;
};

void save_stage_checkpoint(const ExperimentConfig& config, const ContinualState& state,
                           std::size_t completed_stage) {
    std::filesystem::create_directories(config.out_dir);
    Checkpoint ckpt;
    ckpt.config_hash = config_hash(config);
    ckpt.completed_stage = completed_stage;
    ckpt.rng_state = "derived:" + std::to_string(config.train.seed) + ":" +
                     std::to_string(completed_stage);
    ckpt.model = state.model;
    ckpt.stacks = state.stacks;
    ckpt.v_prev = state.v_prev;
    checkpoint_save(config.out_dir + "/checkpoint_stage" + std::to_string(completed_stage) +
                        ".ckpt",
                    ckpt);
}

// Stages state.next_stage .. T: train (unless pretrain_only), evaluate, seal.
void continual_loop(const ExperimentConfig& config, const StagePrep& prep, ContinualState& state,
                    RunReport& report) {
    const std::uint64_t seed = config.train.seed;
    const Policy policy = method_policy(config.method);
    const bool trains = config.method != "pretrain_only";
    const SealOptions seal_opts = seal_options(config);
    const TrainConfig tc = stage_train_config(config);

    EvalOptions eval_opts;
    eval_opts.beam_width = config.model.beam_width;
    eval_opts.top_k = config.model.top_k;

    const std::size_t n_stages = prep.blocks.size();
    for (std::size_t t = state.next_stage; t <= n_stages; ++t) {
        const StageBlock& block = prep.blocks.at(t - 1);
        StageResult result;
        result.stage = t;

        if (trains)
            result.train_log =
                train_stage(state.model, state.stacks, prep.book, block, &state.v_prev, tc, t);
        result.test_metrics = evaluate_block(state.model, state.stacks, prep.book, block,
                                             eval_opts);
        if (config.model.eval_validation && !block.val_pairs.empty())
            result.val_metrics =
                evaluate_pairs(state.model, state.stacks, prep.book, block.val_pairs, eval_opts);
        report.stages.push_back(std::move(result));

        if (trains && t < n_stages) {
            state.v_prev = pack(state.stacks);
            std::mt19937_64 seal_engine = make_engine(seed, t, "seal");
            for (AdapterStack& s : state.stacks)
                s = seal_stage(s, s.live, policy_inherits(policy), seal_opts, seal_engine);
        }
        state.next_stage = t + 1;
        if (config.save_checkpoints) save_stage_checkpoint(config, state, t);
    }
    report.cross_stage_mean = recompute_cross_stage_mean(report);
}

}  // namespace

StagePrep prepare_data(const ExperimentConfig& config) {
    InteractionLog log;
    std::vector<std::size_t> item_clusters;
    const std::uint64_t seed = config.train.seed;

    if (config.data.source == "drift") {
        DriftResult drift = generate_drift(drift_spec_from_config(config.data, seed));
        log = std::move(drift.log);
        item_clusters = std::move(drift.item_clusters);
    } else {
        log = ingest_csv(config.data.csv_path);
        item_clusters = hash_bucket_clusters(
            log.n_items, std::min(config.data.csv_clusters, config.model.codebook), seed);
    }

    std::vector<BlockInput> inputs;
    if (config.data.split == "chronological")
        inputs = split_chronological(log, config.data.stages, config.data.pretrain_frac);
    else
        inputs = split_user_disjoint(log, config.data.stages, derive_seed(seed, 0, "split"),
                                     config.data.pretrain_frac);

    StagePrep prep;
    PairOptions pair_opts;
    pair_opts.window = config.data.window;
    pair_opts.min_interactions = config.data.min_interactions;
    prep.blocks = make_stage_blocks(inputs, pair_opts);
    prep.book = assign_codes(log.n_items, item_clusters, config.model.code_len,
                             config.model.codebook, derive_seed(seed, 0, "codes"));
    return prep;
}

Stage1State run_stage1(const ExperimentConfig& config, const StagePrep& prep) {
    const std::uint64_t seed = config.train.seed;
    Stage1State state;
    state.model = init_model(prep.book, config.model.hidden, derive_seed(seed, 0, "model"));

    // Stage 1 is policy-agnostic: no frozen history exists yet.
    std::mt19937_64 stack_engine = make_engine(seed, 0, "stacks");
    std::vector<AdapterStack> stacks = init_stacks(
        state.model, config.model.rank, method_policy(config.method), 0.02, stack_engine);

    TrainConfig tc = stage_train_config(config);
    tc.lambda = 0.0;  // nothing to anchor to at stage 1
    state.log = train_stage(state.model, stacks, prep.book, prep.blocks.at(0), nullptr, tc, 1);

    state.trained_live.reserve(stacks.size());
    for (const AdapterStack& s : stacks) state.trained_live.push_back(s.live);
    return state;
}

PipelineOutcome run_continual(const ExperimentConfig& config, const StagePrep& prep,
                              const Stage1State& stage1) {
    const auto t_start = std::chrono::steady_clock::now();
    const std::uint64_t seed = config.train.seed;
    const Policy policy = method_policy(config.method);
    const bool trains = config.method != "pretrain_only";

    PipelineOutcome out;
    out.report.config_json = config_to_json(config);
    out.report.method = config.method;
    out.report.seed = seed;
    out.report.pretrain_log = stage1.log;

    ContinualState state;
    state.model = stage1.model;
    for (const LoraAdapter& live : stage1.trained_live) {
        AdapterStack s;
        s.site_id = live.site_id;
        s.policy = policy;
        s.live = live;
        state.stacks.push_back(std::move(s));
    }

    state.v_prev = pack(state.stacks);
    if (trains) {
        const SealOptions seal_opts = seal_options(config);
        std::mt19937_64 seal_engine = make_engine(seed, 1, "seal");
        for (AdapterStack& s : state.stacks)
            s = seal_stage(s, s.live, policy_inherits(policy), seal_opts, seal_engine);
    }
    state.next_stage = 2;
    if (config.save_checkpoints) save_stage_checkpoint(config, state, 1);

    continual_loop(config, prep, state, out.report);

    out.model = std::move(state.model);
    out.stacks = std::move(state.stacks);
    out.v_prev = std::move(state.v_prev);
    out.report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

PipelineOutcome run_pipeline_outcome(const ExperimentConfig& config) {
    const auto t_start = std::chrono::steady_clock::now();
    const StagePrep prep = prepare_data(config);
    const Stage1State stage1 = run_stage1(config, prep);
    PipelineOutcome out = run_continual(config, prep, stage1);
    out.report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

RunReport run_pipeline(const ExperimentConfig& config) {
    return run_pipeline_outcome(config).report;
}

PipelineOutcome resume_pipeline(const ExperimentConfig& config, const Checkpoint& ckpt) {
    const auto t_start = std::chrono::steady_clock::now();
    if (ckpt.config_hash != config_hash(config))
        throw CheckpointError("resume_pipeline: checkpoint was produced by a different config");
    const StagePrep prep = prepare_data(config);

    PipelineOutcome out;
    out.report.config_json = config_to_json(config);
    out.report.method = config.method;
    out.report.seed = config.train.seed;

    ContinualState state;
    state.model = ckpt.model;
    state.stacks = ckpt.stacks;
    state.v_prev = ckpt.v_prev;
    state.next_stage = ckpt.completed_stage + 1;

    continual_loop(config, prep, state, out.report);

    out.model = std::move(state.model);
    out.stacks = std::move(state.stacks);
    out.v_prev = std::move(state.v_prev);
    out.report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

}  // namespace peso
