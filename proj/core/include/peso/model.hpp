#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "peso/adapters.hpp"
#include "peso/codes.hpp"
#include "peso/data.hpp"
#include "peso/matrix.hpp"
#include "peso/param_vector.hpp"
#include "peso/proximal.hpp"

namespace peso {

/// Next-item scorer: mean-pooled token embeddings, a tanh encoder with LoRA
/// site "enc", a teacher-forced tanh decoder with LoRA site "dec", and one
/// frozen output head per code position.
struct ToyRecModel {
    std::size_t hidden = 0;
    std::vector<std::size_t> codebook_sizes;  // K_j
    std::vector<std::size_t> token_offsets;   // embedding row of position j's codebook
    Matrix embed;                              // V × d, V = ΣK_j
    Matrix w_enc;                              // d × d
    Matrix w_dec;                              // d × d
    std::vector<Matrix> w_out;                 // K_j × d per position

    std::size_t code_len() const { return codebook_sizes.size(); }
    std::size_t vocab_size() const;
};

ToyRecModel init_model(const CodeBook& book, std::size_t hidden, std::uint64_t seed);

/// Fresh rank-r stacks for the two insertion sites, A ~ N(0, init_std²), B = 0.
std::vector<AdapterStack> init_stacks(const ToyRecModel& model, std::size_t rank, Policy policy,
                                      double init_std, std::mt19937_64& engine);

/// Base plus effective adapter deltas, recomputed whenever factors change.
struct EffectiveWeights {
    Matrix m_enc;
    Matrix m_dec;
};
EffectiveWeights effective_weights(const ToyRecModel& model,
                                   const std::vector<AdapterStack>& stacks);

inline constexpr std::size_t kHistoryWindow = 20;

/// Per-position logits for the next item under teacher forcing, plus the
/// intermediate states the backward sweep needs.
struct ForwardTrace {
    Vector h;                      // mean history-token embedding
    std::vector<Vector> states;    // s_0 .. s_{L-1}
    std::vector<Vector> inputs;    // decoder inputs a_j = s_j + e(y_j), j < L-1
    std::vector<Vector> logits;    // z_1 .. z_L
};

/// Throws PreconditionError on an empty history. Histories longer than the
/// window use only their last 20 items.
ForwardTrace forward(const ToyRecModel& model, const EffectiveWeights& eff, const CodeBook& book,
                     const std::vector<std::size_t>& history_items, const ItemCode& target);

/// Trainable coordinates for one stage, in deterministic group order.
struct TrainableRef {
    enum class Kind { Embed, WEnc, WDec, WOut, LoraA, LoraB, SdAlpha };
    Kind kind;
    std::size_t index = 0;  // position for WOut, site index for LoRA/alpha
    std::string group_id;
};

struct TrainConfig {
    double lr = 0.5;
    double lr_scale = 0.1;        // continual-stage multiplier; stage 1 uses 1
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double lambda = 0.0;
    RegularizerKind regularizer = RegularizerKind::SoftmaxKlPerModule;
    std::uint64_t seed = 1;
    std::size_t output_kl_probe_cap = 64;
    double divergence_threshold = 1e6;
};

/// The exact trainable set: all base weights plus LoRA at stage 1; live LoRA
/// factors (minus frozen-A sites) and contributing SD magnitudes afterwards.
std::vector<TrainableRef> trainable_refs(const ToyRecModel& model,
                                         const std::vector<AdapterStack>& stacks,
                                         std::size_t stage_index);

ParamVector snapshot_params(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                            const std::vector<TrainableRef>& refs);
void assign_params(ToyRecModel& model, std::vector<AdapterStack>& stacks,
                   const std::vector<TrainableRef>& refs, const ParamVector& values);

struct LossGrad {
    double loss = 0.0;       // data term + regularizer value
    double data_loss = 0.0;  // cross-entropy alone
    double reg_value = 0.0;
    ParamVector grad;        // over exactly the trainable refs
};

/// Mean next-token cross-entropy over the batch plus the configured
/// regularizer (λ > 0 and v_prev present), with exact gradients over the
/// trainable set. Throws NumericError naming the example index on NaN.
LossGrad loss_and_grad(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                       const CodeBook& book, const std::vector<Example>& batch,
                       const ParamVector* v_prev, const TrainConfig& config,
                       std::size_t stage_index);

/// ∂loss/∂αᵢ = ⟨upstream, B̂ᵢÂᵢ⟩_F for each contributing frozen entry.
/// Throws PreconditionError unless the stack's policy trains magnitudes.
Vector sd_magnitude_grad(const AdapterStack& stack, const Matrix& upstream);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean minibatch objective
    double reg_value = 0.0;   // mean regularizer component
    double val_loss = 0.0;    // cross-entropy on validation pairs
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

/// Runs shuffled-minibatch first-order updates with step lr·lr_scale
/// (lr_scale = 1 at stage 1). InfLoRA policies refit A from site input
/// covariance before training. Deterministic given config.seed. Throws
/// DivergenceError when the objective exceeds the divergence threshold.
TrainLog train_stage(ToyRecModel& model, std::vector<AdapterStack>& stacks, const CodeBook& book,
                     const StageBlock& block, const ParamVector* v_prev,
                     const TrainConfig& config, std::size_t stage_index);

/// Site inputs ("enc": pooled history embedding; "dec": decoder inputs) for
/// InfLoRA initialization and output-KL probes.
struct SiteInputs {
    std::vector<Vector> enc;
    std::vector<Vector> dec;
};
SiteInputs collect_site_inputs(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                               const CodeBook& book, const std::vector<Example>& examples,
                               std::size_t cap);

}  // namespace peso
