#include "peso/theory.hpp"

#include <algorithm>
#include <cmath>

namespace peso::theory {

namespace {

// Σ + λH with shape checks.
Matrix regularized_curvature(const QuadraticRisk& risk, const ProximalMetric& metric) {
    const Matrix h = metric.assemble();
    if (h.rows() != risk.sigma.rows())
        throw PreconditionError("metric dimension does not match risk");
    Matrix m = risk.sigma;
    for (std::size_t k = 0; k < m.size(); ++k) m.flat()[k] += metric.lambda * h.flat()[k];
    return m;
}

}  // namespace

double QuadraticRisk::value(const Vector& v) const {
    Vector d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] - v_star[i];
    return 0.5 * dot(d, matvec(sigma, d));
}

Vector QuadraticRisk::gradient(const Vector& v) const {
    Vector d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] - v_star[i];
    return matvec(sigma, d);
}

double InterpolationReport::max_abs_err() const {
    double m = 0.0;
    for (const Pair& p : pairs) m = std::max(m, p.abs_err);
    return m;
}

bool check_complementarity(const Matrix& sigma, const Matrix& h) {
    if (sigma.rows() != h.rows()) throw PreconditionError("check_complementarity: dim mismatch");
    Matrix sum = sigma;
    sum += h;
    const linalg::EigenPairs ep = linalg::sym_eig(sum);
    if (ep.values.empty()) return false;
    const double max_eig = ep.values.front();
    const double min_eig = ep.values.back();
    return min_eig > 1e-8 * max_eig;
}

Vector closed_form_min(const QuadraticRisk& risk, const ProximalMetric& metric,
                       const Vector& v_prev) {
    const Matrix h = metric.assemble();
    if (h.rows() != risk.sigma.rows())
        throw PreconditionError("closed_form_min: metric dimension does not match risk");
    const Matrix lhs = regularized_curvature(risk, metric);
    Vector rhs = matvec(risk.sigma, risk.v_star);
    const Vector hv = matvec(h, v_prev);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += metric.lambda * hv[i];
    return linalg::spd_solve(lhs, rhs);  // FactorizationError when Σ+λH is singular
}

InterpolationReport verify_interpolation(const QuadraticRisk& risk, const ProximalMetric& metric,
                                         const Vector& v_prev, const Vector& v_min) {
    const Matrix h = metric.assemble();
    const linalg::EigenPairs pairs = linalg::gen_eig(risk.sigma, h);
    const double lambda = metric.lambda;

    InterpolationReport report;
    report.pairs.reserve(pairs.values.size());
    for (std::size_t k = 0; k < pairs.values.size(); ++k) {
        Vector q(h.rows());
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = pairs.vectors(i, k);
        const Vector hq = matvec(h, q);

        InterpolationReport::Pair rec;
        rec.rho = pairs.values[k];
        rec.coeff_new = rec.rho / (rec.rho + lambda);
        rec.coeff_old = lambda / (rec.rho + lambda);
        rec.lhs = dot(v_min, hq);
        rec.rhs = rec.coeff_new * dot(risk.v_star, hq) + rec.coeff_old * dot(v_prev, hq);
        rec.abs_err = std::abs(rec.lhs - rec.rhs);
        report.pairs.push_back(rec);
    }
    return report;
}

double descent_vs_closed_form(const QuadraticRisk& risk, const ProximalMetric& metric,
                              const Vector& v_prev) {
    const Matrix h = metric.assemble();
    const Matrix curvature = regularized_curvature(risk, metric);
    const linalg::EigenPairs ep = linalg::sym_eig(curvature);
    const double lip = ep.values.empty() ? 0.0 : ep.values.front();
    if (lip <= 0.0) throw NumericError("descent_vs_closed_form: curvature has no positive mode");
    const double step = 1.0 / lip;

    Vector v = v_prev;
    constexpr long kMaxIters = 100000;
    long it = 0;
    for (; it < kMaxIters; ++it) {
        Vector grad = risk.gradient(v);
        Vector dprev(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) dprev[i] = v[i] - v_prev[i];
        const Vector hg = matvec(h, dprev);
        for (std::size_t i = 0; i < v.size(); ++i) grad[i] += metric.lambda * hg[i];
        if (norm2(grad) <= 1e-10) break;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * grad[i];
    }
    if (it == kMaxIters)
        throw NumericError("descent_vs_closed_form: no convergence in 1e5 iterations");

    const Vector closed = closed_form_min(risk, metric, v_prev);
    double dev = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dev = std::max(dev, std::abs(v[i] - closed[i]));
    return dev;
}

Matrix tangent_sigma(const std::vector<Vector>& features) {
    if (features.empty()) throw PreconditionError("tangent_sigma: empty feature list");
    const std::size_t m = features.front().size();
    Matrix sigma(m, m);
    for (const Vector& phi : features) {
        if (phi.size() != m) throw PreconditionError("tangent_sigma: inconsistent dims");
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) sigma(i, j) += phi[i] * phi[j];
    }
    sigma *= 1.0 / static_cast<double>(features.size());
    return sigma;
}

}  // namespace peso::theory
