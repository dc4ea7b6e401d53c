#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "peso/harness.hpp"
#include "peso/theory.hpp"

namespace peso {

namespace {

Vector gaussian_vec(std::size_t n, std::mt19937_64& engine) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(n);
    for (double& x : v) x = gauss(engine);
    return v;
}

Matrix gaussian_mat(std::size_t r, std::size_t c, std::mt19937_64& engine) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(r, c);
    for (double& x : m.flat()) x = gauss(engine);
    return m;
}

Matrix random_psd(std::size_t m, std::mt19937_64& engine) {
    const Matrix r = gaussian_mat(m, m, engine);
    Matrix s = matmul(r.transposed(), r);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = 0.5 * (s(i, j) + s(j, i));
            s(i, j) = v;
            s(j, i) = v;
        }
    return s;
}

// Two softmax-KL blocks over random anchors, plus a complementarity ridge.
ProximalMetric kl_block_metric(std::size_t m, double lambda, double ridge,
                               std::mt19937_64& engine) {
    ProximalMetric metric;
    metric.lambda = lambda;
    const std::size_t first = m / 2;
    const std::vector<std::size_t> sizes = {first, m - first};
    std::size_t idx = 0;
    for (std::size_t size : sizes) {
        if (size == 0) continue;
        Matrix h = kl_local_hessian(gaussian_vec(size, engine));
        for (std::size_t i = 0; i < size; ++i) h(i, i) += ridge;
        metric.blocks.push_back({"g" + std::to_string(idx++), std::move(h)});
    }
    return metric;
}

double kl_scalar(const Vector& v_t, const Vector& v_prev) {
    const Vector lq = log_softmax(v_t);
    const Vector lp = log_softmax(v_prev);
    double s = 0.0;
    for (std::size_t i = 0; i < v_t.size(); ++i) s += std::exp(lq[i]) * (lq[i] - lp[i]);
    return s;
}

CertifyCheck interpolation_check(const CertifyOptions& options) {
    CertifyCheck check;
    check.name = "prop1_generalized_eigen_interpolation";
    check.tolerance = 1e-8;
    std::mt19937_64 engine(options.seed);

    const std::size_t dims[] = {4, 8, 16};
    const double lambdas[] = {0.5, 2.0, 5.0};
    double max_interp_err = 0.0;
    double max_stationarity = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t m = dims[i % 3];
        const double lambda = lambdas[(i / 3) % 3];
        theory::QuadraticRisk risk{random_psd(m, engine), gaussian_vec(m, engine)};
        const ProximalMetric metric = kl_block_metric(m, lambda, 1e-6, engine);
        const Vector v_prev = gaussian_vec(m, engine);

        Vector v_min = theory::closed_form_min(risk, metric, v_prev);
        if (options.inject_closed_form_sign_flip)
            for (double& x : v_min) x = -x;

        Vector grad = risk.gradient(v_min);
        const Matrix h = metric.assemble();
        Vector dprev(m);
        for (std::size_t k = 0; k < m; ++k) dprev[k] = v_min[k] - v_prev[k];
        const Vector hg = matvec(h, dprev);
        for (std::size_t k = 0; k < m; ++k) grad[k] += lambda * hg[k];
        const double scale = 1.0 + norm_inf(risk.v_star) + norm_inf(v_prev);
        max_stationarity = std::max(max_stationarity, norm_inf(grad) / scale);

        const theory::InterpolationReport report =
            theory::verify_interpolation(risk, metric, v_prev, v_min);
        max_interp_err = std::max(max_interp_err, report.max_abs_err());
    }
    check.max_err = max_interp_err;
    check.pass = max_interp_err <= 1e-8 && max_stationarity <= 1e-9;
    check.detail = "stationarity residual " + std::to_string(max_stationarity);
    return check;
}

CertifyCheck l2_corollary_check(const CertifyOptions& options) {
    CertifyCheck check;
    check.name = "cor1_l2_special_case";
    check.tolerance = 1e-10;
    std::mt19937_64 engine(options.seed + 1);

    const std::size_t dims[] = {4, 8, 16};
    const double lambdas[] = {0.5, 2.0, 5.0};
    double max_coeff_err = 0.0;
    double max_identity_err = 0.0;
    bool monotone = true;
    for (int i = 0; i < 100; ++i) {
        const std::size_t m = dims[i % 3];
        theory::QuadraticRisk risk{random_psd(m, engine), gaussian_vec(m, engine)};
        const Vector v_prev = gaussian_vec(m, engine);
        const linalg::EigenPairs ordinary = linalg::sym_eig(risk.sigma);

        std::vector<double> prev_coeffs;
        for (double lambda : lambdas) {
            ProximalMetric metric;
            metric.lambda = lambda;
            metric.blocks.push_back({"g0", Matrix::identity(m)});
            const Vector v_min = theory::closed_form_min(risk, metric, v_prev);
            const theory::InterpolationReport report =
                theory::verify_interpolation(risk, metric, v_prev, v_min);

            max_identity_err = std::max(max_identity_err, report.max_abs_err());
            for (std::size_t k = 0; k < report.pairs.size(); ++k) {
                // Generalized ρ against ordinary σ²; both sorted descending.
                const double sigma_sq = ordinary.values[k];
                const double expected = sigma_sq / (sigma_sq + lambda);
                max_coeff_err = std::max(max_coeff_err,
                                         std::abs(report.pairs[k].coeff_new - expected));
                if (k > 0 && report.pairs[k - 1].rho > report.pairs[k].rho + 1e-14 &&
                    report.pairs[k - 1].coeff_new <= report.pairs[k].coeff_new)
                    monotone = false;  // coeff_new must grow with ρ
            }
            // coeff_new must shrink as λ grows, for every ρ > 0.
            if (!prev_coeffs.empty()) {
                for (std::size_t k = 0; k < report.pairs.size(); ++k)
                    if (report.pairs[k].rho > 1e-12 &&
                        report.pairs[k].coeff_new >= prev_coeffs[k])
                        monotone = false;
            }
            prev_coeffs.clear();
            for (const auto& p : report.pairs) prev_coeffs.push_back(p.coeff_new);
        }
    }
    check.max_err = max_coeff_err;
    check.pass = max_coeff_err <= check.tolerance && max_identity_err <= 1e-8 && monotone;
    check.detail = std::string(monotone ? "monotone in rho and 1/lambda"
                                        : "monotonicity violated") +
                   ", identity err " + std::to_string(max_identity_err);
    return check;
}

CertifyCheck local_quadratic_check(const CertifyOptions& options) {
    CertifyCheck check;
    check.name = "prop2_softmax_kl_local_quadratic";
    check.tolerance = 1e-5;
    std::mt19937_64 engine(options.seed + 2);
    std::uniform_int_distribution<std::size_t> dim_dist(2, 16);

    double max_hessian_err = 0.0;
    double max_grad = 0.0;
    double max_ratio_err = 0.0;
    for (int s = 0; s < 50; ++s) {
        const std::size_t n = dim_dist(engine);
        const Vector v_prev = gaussian_vec(n, engine);
        const Matrix h = kl_local_hessian(v_prev);

        // Central second differences of K at Δ = 0.
        const double step = 1e-4;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                Vector vpp = v_prev, vpm = v_prev, vmp = v_prev, vmm = v_prev;
                vpp[a] += step;
                vpp[b] += step;
                vpm[a] += step;
                vpm[b] -= step;
                vmp[a] -= step;
                vmp[b] += step;
                vmm[a] -= step;
                vmm[b] -= step;
                const double fd = (kl_scalar(vpp, v_prev) - kl_scalar(vpm, v_prev) -
                                   kl_scalar(vmp, v_prev) + kl_scalar(vmm, v_prev)) /
                                  (4.0 * step * step);
                max_hessian_err = std::max(max_hessian_err, std::abs(fd - h(a, b)));
            }
        }

        // Penalty gradient at Δ = 0: Prop 2 stationarity on the implementation.
        {
            ParamVector anchor({{"g", v_prev}});
            const ParamVector g0 = softmax_kl_grad(anchor, anchor, 1.0);
            for (double v : g0.group(0).values) max_grad = std::max(max_grad, std::abs(v));
        }

        // Ratio against the quadratic form at ε = 1e-3.
        Vector delta = gaussian_vec(n, engine);
        const double nrm = norm2(delta);
        for (double& x : delta) x /= nrm;
        const double quad = dot(delta, matvec(h, delta));
        if (quad > 1e-6) {
            const double eps = 1e-3;
            Vector v_t = v_prev;
            for (std::size_t k = 0; k < n; ++k) v_t[k] += eps * delta[k];
            const double ratio = kl_scalar(v_t, v_prev) / (0.5 * eps * eps * quad);
            max_ratio_err = std::max(max_ratio_err, std::abs(ratio - 1.0));
        }
    }
    check.max_err = max_hessian_err;
    check.pass = max_hessian_err <= 1e-5 && max_grad <= 1e-10 && max_ratio_err <= 0.05;
    check.detail = "grad at zero " + std::to_string(max_grad) + ", quadratic ratio deviation " +
                   std::to_string(max_ratio_err);
    return check;
}

CertifyCheck variance_identity_check(const CertifyOptions& options) {
    CertifyCheck check;
    check.name = "cor2_variance_identity";
    check.tolerance = 1e-12;
    std::mt19937_64 engine(options.seed + 3);
    std::uniform_int_distribution<std::size_t> dim_dist(2, 16);

    double max_err = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = dim_dist(engine);
        const Vector p = softmax(gaussian_vec(n, engine));
        const Vector delta = gaussian_vec(n, engine);

        Matrix h(n, n);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) h(a, b) = -p[a] * p[b];
            h(a, a) += p[a];
        }
        const double quad = dot(delta, matvec(h, delta));
        double mu = 0.0;
        for (std::size_t k = 0; k < n; ++k) mu += p[k] * delta[k];
        double var = 0.0;
        for (std::size_t k = 0; k < n; ++k) var += p[k] * (delta[k] - mu) * (delta[k] - mu);
        max_err = std::max(max_err, std::abs(quad - var));
    }
    check.max_err = max_err;
    check.pass = max_err <= check.tolerance;
    return check;
}

CertifyCheck descent_bridge_check(const CertifyOptions& options) {
    CertifyCheck check;
    check.name = "descent_matches_closed_form";
    check.tolerance = 1e-6;
    std::mt19937_64 engine(options.seed + 4);

    double max_dev = 0.0;
    for (int i = 0; i < 20; ++i) {
        const std::size_t m = 4 + 2 * (i % 5);
        theory::QuadraticRisk risk{random_psd(m, engine), gaussian_vec(m, engine)};
        const ProximalMetric metric = kl_block_metric(m, 1.0 + (i % 3), 1e-6, engine);
        const Vector v_prev = gaussian_vec(m, engine);
        max_dev = std::max(max_dev, theory::descent_vs_closed_form(risk, metric, v_prev));
    }
    check.max_err = max_dev;
    check.pass = max_dev <= check.tolerance;
    return check;
}

}  // namespace

bool CertifyReport::all_pass() const {
    for (const CertifyCheck& c : checks)
        if (!c.pass) return false;
    return true;
}

CertifyReport certify(const CertifyOptions& options) {
    CertifyReport report;
    report.checks.push_back(interpolation_check(options));
    report.checks.push_back(l2_corollary_check(options));
    report.checks.push_back(local_quadratic_check(options));
    report.checks.push_back(variance_identity_check(options));
    report.checks.push_back(descent_bridge_check(options));
    return report;
}

std::string certify_report_json(const CertifyReport& report) {
    nlohmann::json j;
    j["checks"] = nlohmann::json::array();
    for (const CertifyCheck& c : report.checks)
        j["checks"].push_back({{"name", c.name},
                               {"max_err", c.max_err},
                               {"tolerance", c.tolerance},
                               {"pass", c.pass},
                               {"detail", c.detail}});
    j["all_pass"] = report.all_pass();
    return j.dump(2);
}

}  // namespace peso
