#include "peso/proximal.hpp"

#include <algorithm>
#include <cmath>

namespace peso {

namespace {

// KL(softmax(v)‖softmax(w)) over one group, plus optionally its gradient in v.
// grad_i = q_i (u_i − Σ_j q_j u_j) with q = softmax(v), u = log q − log p.
double group_kl(const Vector& v, const Vector& w, Vector* grad) {
    const Vector lq = log_softmax(v);
    const Vector lp = log_softmax(w);
    const std::size_t n = v.size();
    double value = 0.0;
    double mean_u = 0.0;
    Vector q(n);
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = std::exp(lq[i]);
        const double u = lq[i] - lp[i];
        value += q[i] * u;
        mean_u += q[i] * u;
    }
    if (grad) {
        grad->resize(n);
        for (std::size_t i = 0; i < n; ++i) (*grad)[i] = q[i] * ((lq[i] - lp[i]) - mean_u);
    }
    return value;
}

Vector gather(const Vector& flat, const std::vector<std::size_t>& idx) {
    Vector out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = flat[idx[i]];
    return out;
}

Matrix reshape(const Vector& flat, std::size_t rows, std::size_t cols) {
    return Matrix::from_rows(rows, cols, flat);
}

}  // namespace

RegularizerKind parse_regularizer(const std::string& name) {
    if (name == "l2") return RegularizerKind::L2;
    if (name == "softmax_kl_per_module") return RegularizerKind::SoftmaxKlPerModule;
    if (name == "softmax_kl_per_rank") return RegularizerKind::SoftmaxKlPerRank;
    if (name == "lora_output_kl") return RegularizerKind::LoraOutputKl;
    if (name == "orthogonality") return RegularizerKind::Orthogonality;
    throw PreconditionError("unknown regularizer: " + name);
}

std::string regularizer_name(RegularizerKind kind) {
    switch (kind) {
        case RegularizerKind::L2:
            return "l2";
        case RegularizerKind::SoftmaxKlPerModule:
            return "softmax_kl_per_module";
        case RegularizerKind::SoftmaxKlPerRank:
            return "softmax_kl_per_rank";
        case RegularizerKind::LoraOutputKl:
            return "lora_output_kl";
        case RegularizerKind::Orthogonality:
            return "orthogonality";
    }
    throw PreconditionError("unknown regularizer kind");
}

std::size_t ProximalMetric::total_dim() const {
    std::size_t n = 0;
    for (const Block& b : blocks) n += b.h.rows();
    return n;
}

Matrix ProximalMetric::assemble() const {
    const std::size_t n = total_dim();
    Matrix h(n, n);
    std::size_t off = 0;
    for (const Block& b : blocks) {
        for (std::size_t i = 0; i < b.h.rows(); ++i)
            for (std::size_t j = 0; j < b.h.cols(); ++j) h(off + i, off + j) = b.h(i, j);
        off += b.h.rows();
    }
    return h;
}

Vector softmax(const Vector& logits) {
    Vector out(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

Vector log_softmax(const Vector& logits) {
    Vector out(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    const double lz = std::log(z) + m;
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

double softmax_kl_value(const ParamVector& v_t, const ParamVector& v_prev, double lambda) {
    v_t.require_same_structure(v_prev, "softmax_kl_value");
    double total = 0.0;
    for (std::size_t g = 0; g < v_t.group_count(); ++g)
        total += group_kl(v_t.group(g).values, v_prev.group(g).values, nullptr);
    return lambda * total;
}

ParamVector softmax_kl_grad(const ParamVector& v_t, const ParamVector& v_prev, double lambda) {
    v_t.require_same_structure(v_prev, "softmax_kl_grad");
    ParamVector grad = ParamVector::zeros_like(v_t);
    for (std::size_t g = 0; g < v_t.group_count(); ++g) {
        Vector gg;
        group_kl(v_t.group(g).values, v_prev.group(g).values, &gg);
        for (std::size_t i = 0; i < gg.size(); ++i) grad.group(g).values[i] = lambda * gg[i];
    }
    return grad;
}

double softmax_kl_value_plan(const Vector& v_t, const Vector& v_prev, const GroupingPlan& plan,
                             double lambda) {
    if (v_t.size() != plan.source_dim || v_prev.size() != plan.source_dim)
        throw PreconditionError("softmax_kl_value_plan: vector length does not match plan");
    double total = 0.0;
    for (const GroupingPlan::PlanGroup& pg : plan.groups)
        total += group_kl(gather(v_t, pg.indices), gather(v_prev, pg.indices), nullptr);
    return lambda * total;
}

Vector softmax_kl_grad_plan(const Vector& v_t, const Vector& v_prev, const GroupingPlan& plan,
                            double lambda) {
    if (v_t.size() != plan.source_dim || v_prev.size() != plan.source_dim)
        throw PreconditionError("softmax_kl_grad_plan: vector length does not match plan");
    Vector grad(plan.source_dim, 0.0);
    for (const GroupingPlan::PlanGroup& pg : plan.groups) {
        Vector gg;
        group_kl(gather(v_t, pg.indices), gather(v_prev, pg.indices), &gg);
        for (std::size_t i = 0; i < pg.indices.size(); ++i)
            grad[pg.indices[i]] += lambda * gg[i];
    }
    return grad;
}

Matrix kl_local_hessian(const Vector& v_prev_group) {
    const Vector p = softmax(v_prev_group);
    const std::size_t n = p.size();
    Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) h(i, j) = -p[i] * p[j];
        h(i, i) += p[i];
    }
    return h;
}

std::pair<double, ParamVector> l2_value_grad(const ParamVector& v_t, const ParamVector& v_prev,
                                             double lambda) {
    v_t.require_same_structure(v_prev, "l2_value_grad");
    double sq = 0.0;
    ParamVector grad = ParamVector::zeros_like(v_t);
    for (std::size_t g = 0; g < v_t.group_count(); ++g) {
        const Vector& a = v_t.group(g).values;
        const Vector& b = v_prev.group(g).values;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            sq += d * d;
            grad.group(g).values[i] = lambda * d;
        }
    }
    return {0.5 * lambda * sq, std::move(grad)};
}

GroupingPlan per_rank_plan(const std::vector<SiteShapes>& sites) {
    GroupingPlan plan;
    std::size_t off = 0;
    for (const SiteShapes& s : sites) {
        for (std::size_t r = 0; r < s.rank; ++r) {
            GroupingPlan::PlanGroup pg;
            pg.id = s.site_id + ".A.row" + std::to_string(r);
            pg.indices.resize(s.d_in);
            for (std::size_t j = 0; j < s.d_in; ++j) pg.indices[j] = off + r * s.d_in + j;
            plan.groups.push_back(std::move(pg));
        }
        off += s.rank * s.d_in;
        for (std::size_t c = 0; c < s.rank; ++c) {
            GroupingPlan::PlanGroup pg;
            pg.id = s.site_id + ".B.col" + std::to_string(c);
            pg.indices.resize(s.d_out);
            for (std::size_t i = 0; i < s.d_out; ++i) pg.indices[i] = off + i * s.rank + c;
            plan.groups.push_back(std::move(pg));
        }
        off += s.d_out * s.rank;
    }
    plan.source_dim = off;
    return plan;
}

RegResult variant_value_grad(RegularizerKind kind, const ParamVector& v_t,
                             const ParamVector& v_prev, double lambda,
                             const RegularizerContext* context) {
    v_t.require_same_structure(v_prev, "variant_value_grad");
    RegResult out;
    out.grad = ParamVector::zeros_like(v_t);

    switch (kind) {
        case RegularizerKind::L2: {
            auto [value, grad] = l2_value_grad(v_t, v_prev, lambda);
            out.value = value;
            out.grad = std::move(grad);
            return out;
        }
        case RegularizerKind::SoftmaxKlPerModule: {
            out.value = softmax_kl_value(v_t, v_prev, lambda);
            out.grad = softmax_kl_grad(v_t, v_prev, lambda);
            return out;
        }
        case RegularizerKind::SoftmaxKlPerRank: {
            if (!context)
                throw PreconditionError("variant_value_grad: per-rank KL needs site shapes");
            std::vector<SiteShapes> shapes;
            for (const RegularizerContext::Site& s : context->sites)
                shapes.push_back({s.site_id, s.a_prev.rows(), s.a_prev.cols(), s.b_prev.rows()});
            const GroupingPlan plan = per_rank_plan(shapes);
            const Vector flat_t = v_t.concatenated();
            const Vector flat_prev = v_prev.concatenated();
            out.value = softmax_kl_value_plan(flat_t, flat_prev, plan, lambda);
            out.grad.assign_concatenated(softmax_kl_grad_plan(flat_t, flat_prev, plan, lambda));
            return out;
        }
        case RegularizerKind::LoraOutputKl: {
            if (!context)
                throw PreconditionError("variant_value_grad: output KL needs probe inputs");
            for (const RegularizerContext::Site& s : context->sites) {
                if (s.probes.empty())
                    throw PreconditionError("variant_value_grad: no probes for site " +
                                            s.site_id);
                const std::size_t ga = v_t.index_of(s.site_id + ".A");
                const std::size_t gb = v_t.index_of(s.site_id + ".B");
                const Matrix a =
                    reshape(v_t.group(ga).values, s.a_prev.rows(), s.a_prev.cols());
                const Matrix b =
                    reshape(v_t.group(gb).values, s.b_prev.rows(), s.b_prev.cols());
                Matrix da(a.rows(), a.cols());
                Matrix db(b.rows(), b.cols());
                const double inv_n = 1.0 / static_cast<double>(s.probes.size());
                double site_value = 0.0;
                for (const Vector& x : s.probes) {
                    const Vector ax = matvec(a, x);
                    const Vector u = matvec(b, ax);
                    const Vector w = matvec(s.b_prev, matvec(s.a_prev, x));
                    Vector gu;
                    site_value += group_kl(u, w, &gu);
                    // dB += gu (Ax)ᵀ, dA += (Bᵀ gu) xᵀ
                    for (std::size_t i = 0; i < b.rows(); ++i)
                        for (std::size_t r = 0; r < b.cols(); ++r)
                            db(i, r) += gu[i] * ax[r] * inv_n;
                    const Vector btg = matvec_t(b, gu);
                    for (std::size_t r = 0; r < a.rows(); ++r)
                        for (std::size_t j = 0; j < a.cols(); ++j)
                            da(r, j) += btg[r] * x[j] * inv_n;
                }
                out.value += lambda * site_value * inv_n;
                for (std::size_t k = 0; k < da.size(); ++k)
                    out.grad.group(ga).values[k] += lambda * da.flat()[k];
                for (std::size_t k = 0; k < db.size(); ++k)
                    out.grad.group(gb).values[k] += lambda * db.flat()[k];
            }
            return out;
        }
        case RegularizerKind::Orthogonality: {
            if (!context)
                throw PreconditionError("variant_value_grad: orthogonality needs past factors");
            for (const RegularizerContext::Site& s : context->sites) {
                const std::size_t ga = v_t.index_of(s.site_id + ".A");
                const std::size_t gb = v_t.index_of(s.site_id + ".B");
                const Matrix a =
                    reshape(v_t.group(ga).values, s.a_prev.rows(), s.a_prev.cols());
                const Matrix b =
                    reshape(v_t.group(gb).values, s.b_prev.rows(), s.b_prev.cols());
                const Matrix cross_a = matmul(a, s.a_prev.transposed());  // r × r_prev
                const Matrix cross_b = matmul(b.transposed(), s.b_prev);  // r × r_prev
                double site_value = 0.0;
                for (double v : cross_a.flat()) site_value += v * v;
                for (double v : cross_b.flat()) site_value += v * v;
                out.value += lambda * site_value;
                const Matrix da = 2.0 * matmul(cross_a, s.a_prev);        // r × d_in
                const Matrix db = 2.0 * matmul(s.b_prev, cross_b.transposed());  // d_out × r
                for (std::size_t k = 0; k < da.size(); ++k)
                    out.grad.group(ga).values[k] += lambda * da.flat()[k];
                for (std::size_t k = 0; k < db.size(); ++k)
                    out.grad.group(gb).values[k] += lambda * db.flat()[k];
            }
            return out;
        }
    }
    throw PreconditionError("variant_value_grad: unknown regularizer kind");
}

}  // namespace peso
