#pragma once

#include <string>
#include <vector>

#include "peso/matrix.hpp"
#include "peso/param_vector.hpp"

namespace peso {

/// The regularizer family anchoring live parameters to the previous stage.
enum class RegularizerKind {
    L2,
    SoftmaxKlPerModule,
    SoftmaxKlPerRank,
    LoraOutputKl,
    Orthogonality,
};

RegularizerKind parse_regularizer(const std::string& name);
std::string regularizer_name(RegularizerKind kind);

/// Block-diagonal PSD metric over named parameter groups.
struct ProximalMetric {
    struct Block {
        std::string group_id;
        Matrix h;  // symmetric PSD
    };
    std::vector<Block> blocks;
    double lambda = 0.0;

    std::size_t total_dim() const;
    Matrix assemble() const;  // blkdiag of all blocks, in declared order
};

/// Numerically stable softmax (max-shifted before exponentiation).
Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

/// λ·Σ_g KL(softmax(v_t⁽ᵍ⁾) ‖ softmax(v_prev⁽ᵍ⁾)) over the ParamVector's own
/// groups. Throws PreconditionError when group structures differ.
double softmax_kl_value(const ParamVector& v_t, const ParamVector& v_prev, double lambda);

/// Gradient of softmax_kl_value with respect to v_t. Each group's gradient
/// sums to zero (softmax shift invariance).
ParamVector softmax_kl_grad(const ParamVector& v_t, const ParamVector& v_prev, double lambda);

/// Same penalty over an arbitrary regrouping of the flat coordinates.
double softmax_kl_value_plan(const Vector& v_t, const Vector& v_prev, const GroupingPlan& plan,
                             double lambda);
Vector softmax_kl_grad_plan(const Vector& v_t, const Vector& v_prev, const GroupingPlan& plan,
                            double lambda);

/// Local curvature of the softmax-KL penalty at zero displacement:
/// diag(p) − ppᵀ with p = softmax(v_prev_group). PSD with zero row sums.
Matrix kl_local_hessian(const Vector& v_prev_group);

/// ((λ/2)‖v_t − v_prev‖², λ(v_t − v_prev)).
std::pair<double, ParamVector> l2_value_grad(const ParamVector& v_t, const ParamVector& v_prev,
                                             double lambda);

/// Adapter factor shapes needed to regroup coordinates per rank. Order and
/// flattening must match pack(): per site, group "<site>.A" (rank × d_in,
/// row-major) then "<site>.B" (d_out × rank, row-major).
struct SiteShapes {
    std::string site_id;
    std::size_t rank = 0;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
};

/// One group per A-row and per B-column of every site.
GroupingPlan per_rank_plan(const std::vector<SiteShapes>& sites);

/// Previous-stage factors and probe inputs for the function-space and
/// orthogonality variants.
struct RegularizerContext {
    struct Site {
        std::string site_id;
        Matrix a_prev;                // rank × d_in
        Matrix b_prev;                // d_out × rank
        std::vector<Vector> probes;   // site inputs, used by LoraOutputKl
    };
    std::vector<Site> sites;
};

struct RegResult {
    double value = 0.0;
    ParamVector grad;
};

/// Value and gradient of the chosen regularizer at v_t anchored at v_prev.
/// LoraOutputKl and Orthogonality require `context`; the KL variants and L2
/// ignore it. All values and gradients carry λ inside.
RegResult variant_value_grad(RegularizerKind kind, const ParamVector& v_t,
                             const ParamVector& v_prev, double lambda,
                             const RegularizerContext* context);

}  // namespace peso
