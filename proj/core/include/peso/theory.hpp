#pragma once

#include <vector>

#include "peso/linalg.hpp"
#include "peso/matrix.hpp"
#include "peso/proximal.hpp"

namespace peso::theory {

/// Centered quadratic risk ½(v−v*)ᵀΣ(v−v*) with PSD curvature.
struct QuadraticRisk {
    Matrix sigma;   // m × m, symmetric PSD
    Vector v_star;  // length m

    double value(const Vector& v) const;
    Vector gradient(const Vector& v) const;
};

/// Per-direction record of the interpolation identity: along each generalized
/// eigendirection q_k of (Σ, H), the proximal minimizer's H-inner product is
/// the convex combination ρ/(ρ+λ)·⟨v*,q⟩_H + λ/(ρ+λ)·⟨v_prev,q⟩_H.
struct InterpolationReport {
    struct Pair {
        double rho = 0.0;
        double coeff_new = 0.0;  // ρ/(ρ+λ)
        double coeff_old = 0.0;  // λ/(ρ+λ)
        double lhs = 0.0;
        double rhs = 0.0;
        double abs_err = 0.0;
    };
    std::vector<Pair> pairs;

    double max_abs_err() const;
};

/// True iff ker(Σ) ∩ ker(H) = {0}, decided by the smallest eigenvalue of
/// Σ + H against 1e-8 times its largest.
bool check_complementarity(const Matrix& sigma, const Matrix& h);

/// Unique minimizer of ½(v−v*)ᵀΣ(v−v*) + (λ/2)(v−v_prev)ᵀH(v−v_prev):
/// solves (Σ+λH)v = Σv* + λHv_prev. Throws FactorizationError when
/// complementarity fails and Σ+λH is singular.
Vector closed_form_min(const QuadraticRisk& risk, const ProximalMetric& metric,
                       const Vector& v_prev);

/// Checks the interpolation identity at v_min for every generalized pair of
/// (Σ, H) on range(H).
InterpolationReport verify_interpolation(const QuadraticRisk& risk, const ProximalMetric& metric,
                                         const Vector& v_prev, const Vector& v_min);

/// Gradient descent with fixed step 1/L (L = max eigenvalue of Σ+λH) from
/// v_prev until ‖grad‖₂ ≤ 1e-10; returns the deviation ‖v − v_closed‖∞ from
/// the closed form. Throws NumericError past 1e5 iterations.
double descent_vs_closed_form(const QuadraticRisk& risk, const ProximalMetric& metric,
                              const Vector& v_prev);

/// Empirical second-moment matrix (1/n)ΣΦΦᵀ of tangent features.
Matrix tangent_sigma(const std::vector<Vector>& features);

}  // namespace peso::theory
