#pragma once

#include <random>
#include <string>
#include <vector>

#include "peso/matrix.hpp"
#include "peso/param_vector.hpp"

namespace peso {

/// Low-rank factor pair for one insertion site: delta(A,B) = B·A.
struct LoraAdapter {
    std::string site_id;
    Matrix a;  // rank × d_in
    Matrix b;  // d_out × rank
    std::size_t rank = 0;
    bool a_trainable = true;  // false while an InfLoRA stage fixes A

    std::size_t d_in() const { return a.cols(); }
    std::size_t d_out() const { return b.rows(); }
};

/// How the live adapter and the frozen history compose into the effective
/// weight update, stage over stage.
enum class Policy {
    SingleEvolving,
    SumAll,
    SumLatest,
    SumAllInherit,
    SumLatestInherit,
    SdAll,
    SdLatest,
    SdAllInherit,
    SdLatestInherit,
    InfAll,
    InfLatest,
    InfAllInherit,
    InfLatestInherit,
    Peso,
};

enum class PolicyFamily { Single, Sum, Sd, Inf, Peso };

PolicyFamily policy_family(Policy p);
bool policy_is_cumulative(Policy p);   // Sum, Sd, Inf
bool policy_latest_only(Policy p);     // sums only the most recent frozen entry
bool policy_inherits(Policy p);        // live adapter starts from previous stage's
bool policy_normalizes_frozen(Policy p);  // Sum and Sd seal unit-Frobenius factors
bool policy_trains_magnitudes(Policy p);  // Sd family
bool policy_fixes_a(Policy p);            // Inf family

Policy parse_policy(const std::string& name);
std::string policy_name(Policy p);

/// One frozen stage: normalized (or raw, for InfLoRA) factors and magnitude.
struct FrozenEntry {
    Matrix a_hat;
    Matrix b_hat;
    double alpha = 0.0;
};

/// Adapter state for one site: frozen history in stage order plus the live
/// trainable pair.
struct AdapterStack {
    std::string site_id;
    std::vector<FrozenEntry> frozen;
    LoraAdapter live;
    Policy policy = Policy::SingleEvolving;
};

/// Effective weight update for the stack under its policy:
/// cumulative families return Σ αᵢ·B̂ᵢÂᵢ (+ live B·A), restricted to the most
/// recent frozen entry for "latest" policies; single evolving and PESO return
/// the live B·A alone.
Matrix effective_delta(const AdapterStack& stack);

enum class SdAlphaMode {
    PaperInit,        // sealed magnitudes start at 1.0
    FunctionPreserve  // sealed magnitudes start at ‖B‖_F·‖A‖_F
};

struct SealOptions {
    SdAlphaMode sd_alpha_mode = SdAlphaMode::PaperInit;
    double fresh_init_std = 0.02;
    bool trim_history = false;  // keep only entries a "latest" policy can use
};

/// Closes a stage: pushes the trained factors onto the frozen history
/// (normalized for Sum/SD, raw with α=1 for Inf; no-op for single/PESO) and
/// prepares the next stage's live adapter — a copy when inherit is set,
/// otherwise A ~ N(0, fresh_init_std²), B = 0 drawn from `engine`.
/// Throws NumericError if a factor to normalize has zero Frobenius norm.
AdapterStack seal_stage(const AdapterStack& stack, const LoraAdapter& trained, bool inherit,
                        const SealOptions& options, std::mt19937_64& engine);

/// InfLoRA stage initialization: A rows are the top-r eigenvectors of the
/// empirical input covariance (1/n)Σxxᵀ, B = 0, A marked non-trainable.
/// Throws PreconditionError with fewer than `rank` inputs.
LoraAdapter inflora_init(const std::string& site_id, const std::vector<Vector>& inputs,
                         std::size_t rank, std::size_t d_out);

/// Flattens every live factor matrix into one ParamVector, one group per
/// factor, ordered by site then A before B (group ids "<site>.A", "<site>.B").
ParamVector pack(const std::vector<AdapterStack>& stacks);

/// Writes group values back into the live factor matrices.
void unpack(const ParamVector& v, std::vector<AdapterStack>& stacks);

}  // namespace peso
