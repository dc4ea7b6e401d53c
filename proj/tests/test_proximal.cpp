#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_check.hpp"
#include "peso/proximal.hpp"

using namespace peso;

namespace {

ParamVector random_params(const std::vector<std::pair<std::string, std::size_t>>& shape,
                          std::mt19937_64& engine, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    std::vector<ParamVector::Group> groups;
    for (const auto& [id, n] : shape) {
        Vector v(n);
        for (double& x : v) x = gauss(engine);
        groups.push_back({id, std::move(v)});
    }
    return ParamVector(std::move(groups));
}

// Independent long-double KL oracle over one group.
long double kl_oracle(const Vector& v, const Vector& w) {
    const std::size_t n = v.size();
    long double zv = 0.0L, zw = 0.0L;
    long double mv = v[0], mw = w[0];
    for (double x : v) mv = std::max<long double>(mv, x);
    for (double x : w) mw = std::max<long double>(mw, x);
    for (double x : v) zv += expl(x - mv);
    for (double x : w) zw += expl(x - mw);
    long double kl = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const long double lq = (v[i] - mv) - logl(zv);
        const long double lp = (w[i] - mw) - logl(zw);
        kl += expl(lq) * (lq - lp);
    }
    return kl;
}

}  // namespace

TEST_CASE("softmax_kl_value examples") {
    SUBCASE("identical parameters give zero") {
        std::mt19937_64 engine(1);
        const ParamVector v = random_params({{"a", 5}, {"b", 3}}, engine);
        CHECK(softmax_kl_value(v, v, 2.5) == 0.0);
    }
    SUBCASE("frozen oracle value for ((1,0) vs (0,0))") {
        const ParamVector v_t({{"g", {1.0, 0.0}}});
        const ParamVector v_prev({{"g", {0.0, 0.0}}});
        // High-precision summation q·log(q/p) with q = softmax(1,0):
        // 0.11094407167172735 (50-digit arithmetic).
        const double value = softmax_kl_value(v_t, v_prev, 1.0);
        CHECK(value == doctest::Approx(0.11094407167172735).epsilon(1e-12));
        CHECK(std::abs(value - double(kl_oracle({1.0, 0.0}, {0.0, 0.0}))) < 1e-15);
    }
    SUBCASE("per-group constant shifts leave the value unchanged") {
        std::mt19937_64 engine(2);
        const ParamVector v_prev = random_params({{"a", 6}, {"b", 4}}, engine);
        ParamVector v_t = random_params({{"a", 6}, {"b", 4}}, engine);
        const double before = softmax_kl_value(v_t, v_prev, 1.0);
        for (double& x : v_t.group(0).values) x += 3.7;
        for (double& x : v_t.group(1).values) x -= 1.2;
        const double after = softmax_kl_value(v_t, v_prev, 1.0);
        CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
    SUBCASE("mismatched groups are rejected") {
        std::mt19937_64 engine(3);
        const ParamVector a = random_params({{"a", 5}}, engine);
        const ParamVector b = random_params({{"b", 5}}, engine);
        CHECK_THROWS_AS(softmax_kl_value(a, b, 1.0), PreconditionError);
    }
}

TEST_CASE("softmax_kl_grad") {
    std::mt19937_64 engine(5);
    SUBCASE("zero at the anchor") {
        const ParamVector v = random_params({{"a", 8}}, engine);
        const ParamVector g = softmax_kl_grad(v, v, 3.0);
        for (double x : g.group(0).values) CHECK(x == 0.0);
    }
    SUBCASE("matches central finite differences on random 8-dim groups") {
        for (int trial = 0; trial < 10; ++trial) {
            const ParamVector v_prev = random_params({{"a", 8}, {"b", 8}}, engine);
            const ParamVector v_t = random_params({{"a", 8}, {"b", 8}}, engine);
            const double lambda = 1.0 + trial % 3;
            const ParamVector analytic = softmax_kl_grad(v_t, v_prev, lambda);
            const ParamVector fd = testing::fd_gradient(
                [&](const ParamVector& x) { return softmax_kl_value(x, v_prev, lambda); }, v_t,
                1e-6);
            const auto rep = testing::compare_gradients(analytic, fd, 1.0);
            CHECK(rep.max_abs_err < 1e-7);
        }
    }
    SUBCASE("per-group gradient sums are zero") {
        for (int trial = 0; trial < 20; ++trial) {
            const ParamVector v_prev = random_params({{"a", 7}, {"b", 5}}, engine);
            const ParamVector v_t = random_params({{"a", 7}, {"b", 5}}, engine);
            const ParamVector g = softmax_kl_grad(v_t, v_prev, 2.0);
            for (const auto& group : g.groups()) {
                double s = 0.0;
                for (double x : group.values) s += x;
                CHECK(std::abs(s) < 1e-12);
            }
        }
    }
}

TEST_CASE("kl_local_hessian") {
    SUBCASE("symmetric p gives the textbook 2x2 form") {
        const Matrix h = kl_local_hessian({0.0, 0.0});
        CHECK(h(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(h(0, 1) == doctest::Approx(-0.25).epsilon(1e-14));
        CHECK(h(1, 0) == doctest::Approx(-0.25).epsilon(1e-14));
        CHECK(h(1, 1) == doctest::Approx(0.25).epsilon(1e-14));
    }
    SUBCASE("all-ones vector is always in the kernel") {
        std::mt19937_64 engine(7);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            Vector v(3 + trial % 6);
            for (double& x : v) x = gauss(engine);
            const Matrix h = kl_local_hessian(v);
            const Vector ones(v.size(), 1.0);
            for (double x : matvec(h, ones)) CHECK(std::abs(x) < 1e-15);
        }
    }
    SUBCASE("matches the finite-difference Hessian of the KL at zero displacement") {
        std::mt19937_64 engine(9);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vector v(6);
        for (double& x : v) x = gauss(engine);
        const Matrix h = kl_local_hessian(v);
        const double step = 1e-4;
        for (std::size_t a = 0; a < v.size(); ++a)
            for (std::size_t b = 0; b < v.size(); ++b) {
                Vector pp = v, pm = v, mp = v, mm = v;
                pp[a] += step;
                pp[b] += step;
                pm[a] += step;
                pm[b] -= step;
                mp[a] -= step;
                mp[b] += step;
                mm[a] -= step;
                mm[b] -= step;
                const double fd =
                    double((kl_oracle(pp, v) - kl_oracle(pm, v) - kl_oracle(mp, v) +
                            kl_oracle(mm, v)) /
                           (4.0L * step * step));
                CHECK(std::abs(fd - h(a, b)) < 1e-5);
            }
    }
}

TEST_CASE("l2_value_grad") {
    std::mt19937_64 engine(11);
    SUBCASE("zero at anchor") {
        const ParamVector v = random_params({{"a", 4}}, engine);
        const auto [value, grad] = l2_value_grad(v, v, 5.0);
        CHECK(value == 0.0);
        for (double x : grad.group(0).values) CHECK(x == 0.0);
    }
    SUBCASE("lambda 2 with unit displacement") {
        const ParamVector v_t({{"g", {1.0, 0.0}}});
        const ParamVector v_prev({{"g", {0.0, 0.0}}});
        const auto [value, grad] = l2_value_grad(v_t, v_prev, 2.0);
        CHECK(value == doctest::Approx(1.0));
        CHECK(grad.group(0).values[0] == doctest::Approx(2.0));
        CHECK(grad.group(0).values[1] == 0.0);
    }
    SUBCASE("finite differences") {
        const ParamVector v_prev = random_params({{"a", 6}}, engine);
        const ParamVector v_t = random_params({{"a", 6}}, engine);
        const auto [value, grad] = l2_value_grad(v_t, v_prev, 3.0);
        const ParamVector fd = testing::fd_gradient(
            [&](const ParamVector& x) { return l2_value_grad(x, v_prev, 3.0).first; }, v_t, 1e-6);
        CHECK(testing::compare_gradients(grad, fd, 1.0).max_abs_err < 1e-8);
    }
}

namespace {

// A two-site adapter layout exercising every variant.
struct VariantFixture {
    ParamVector v_t;
    ParamVector v_prev;
    RegularizerContext context;

    explicit VariantFixture(std::mt19937_64& engine, std::size_t rank = 2, std::size_t d_in = 3,
                            std::size_t d_out = 3) {
        std::normal_distribution<double> gauss(0.0, 0.7);
        auto rand_vec = [&](std::size_t n) {
            Vector v(n);
            for (double& x : v) x = gauss(engine);
            return v;
        };
        std::vector<ParamVector::Group> gt, gp;
        for (const char* site : {"enc", "dec"}) {
            gt.push_back({std::string(site) + ".A", rand_vec(rank * d_in)});
            gt.push_back({std::string(site) + ".B", rand_vec(d_out * rank)});
            gp.push_back({std::string(site) + ".A", rand_vec(rank * d_in)});
            gp.push_back({std::string(site) + ".B", rand_vec(d_out * rank)});
        }
        v_t = ParamVector(gt);
        v_prev = ParamVector(gp);
        for (const char* site : {"enc", "dec"}) {
            RegularizerContext::Site s;
            s.site_id = site;
            s.a_prev = Matrix::from_rows(rank, d_in,
                                         v_prev.group(v_prev.index_of(s.site_id + ".A")).values);
            s.b_prev = Matrix::from_rows(d_out, rank,
                                         v_prev.group(v_prev.index_of(s.site_id + ".B")).values);
            for (int p = 0; p < 5; ++p) s.probes.push_back(rand_vec(d_in));
            context.sites.push_back(std::move(s));
        }
    }
};

}  // namespace

TEST_CASE("variant_value_grad examples") {
    std::mt19937_64 engine(13);
    SUBCASE("orthogonality with zero past factors is zero") {
        VariantFixture fx(engine);
        for (auto& s : fx.context.sites) {
            s.a_prev = Matrix(2, 3);
            s.b_prev = Matrix(3, 2);
        }
        const RegResult r =
            variant_value_grad(RegularizerKind::Orthogonality, fx.v_t, fx.v_prev, 2.0,
                               &fx.context);
        CHECK(r.value == 0.0);
        for (const auto& g : r.grad.groups())
            for (double x : g.values) CHECK(x == 0.0);
    }
    SUBCASE("per-rank on rank-1 sites equals per-module with row/column groups") {
        VariantFixture fx(engine, 1, 3, 3);
        const RegResult per_rank = variant_value_grad(RegularizerKind::SoftmaxKlPerRank, fx.v_t,
                                                      fx.v_prev, 1.5, &fx.context);
        // With rank 1, A has one row and B one column, so regrouping is the
        // same as the per-module grouping.
        const double per_module = softmax_kl_value(fx.v_t, fx.v_prev, 1.5);
        CHECK(per_rank.value == doctest::Approx(per_module).epsilon(1e-12));
    }
    SUBCASE("output KL vanishes when factors equal the anchor") {
        VariantFixture fx(engine);
        fx.v_t = fx.v_prev;
        const RegResult r = variant_value_grad(RegularizerKind::LoraOutputKl, fx.v_t, fx.v_prev,
                                               3.0, &fx.context);
        CHECK(r.value == doctest::Approx(0.0).epsilon(1e-14));
    }
    SUBCASE("missing context is a precondition error") {
        VariantFixture fx(engine);
        CHECK_THROWS_AS(variant_value_grad(RegularizerKind::LoraOutputKl, fx.v_t, fx.v_prev, 1.0,
                                           nullptr),
                        PreconditionError);
    }
}

TEST_CASE("all regularizer gradients match finite differences") {
    std::mt19937_64 engine(17);
    for (RegularizerKind kind :
         {RegularizerKind::L2, RegularizerKind::SoftmaxKlPerModule,
          RegularizerKind::SoftmaxKlPerRank, RegularizerKind::LoraOutputKl,
          RegularizerKind::Orthogonality}) {
        VariantFixture fx(engine);
        const double lambda = 1.7;
        const RegResult r = variant_value_grad(kind, fx.v_t, fx.v_prev, lambda, &fx.context);
        const ParamVector fd = testing::fd_gradient(
            [&](const ParamVector& x) {
                return variant_value_grad(kind, x, fx.v_prev, lambda, &fx.context).value;
            },
            fx.v_t, 1e-6);
        const auto rep = testing::compare_gradients(r.grad, fd, 1e-3);
        INFO("regularizer ", regularizer_name(kind));
        CHECK(rep.max_rel_err < 1e-6);
    }
}

TEST_CASE("regularizer properties") {
    std::mt19937_64 engine(19);
    SUBCASE("nonnegativity of every kind") {
        for (int trial = 0; trial < 10; ++trial) {
            VariantFixture fx(engine);
            for (RegularizerKind kind :
                 {RegularizerKind::L2, RegularizerKind::SoftmaxKlPerModule,
                  RegularizerKind::SoftmaxKlPerRank, RegularizerKind::LoraOutputKl,
                  RegularizerKind::Orthogonality}) {
                const RegResult r =
                    variant_value_grad(kind, fx.v_t, fx.v_prev, 0.9, &fx.context);
                CHECK(r.value >= 0.0);
            }
        }
    }
    SUBCASE("local quadratic law at epsilon 1e-3") {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int trial = 0; trial < 25; ++trial) {
            const std::size_t n = 4 + trial % 8;
            Vector v_prev(n), delta(n);
            for (double& x : v_prev) x = gauss(engine);
            for (double& x : delta) x = gauss(engine);
            const double nrm = norm2(delta);
            for (double& x : delta) x /= nrm;
            const Matrix h = kl_local_hessian(v_prev);
            const double quad = dot(delta, matvec(h, delta));
            if (quad <= 1e-6) continue;
            const double eps = 1e-3;
            Vector v_t = v_prev;
            for (std::size_t i = 0; i < n; ++i) v_t[i] += eps * delta[i];
            const double value =
                softmax_kl_value(ParamVector({{"g", v_t}}), ParamVector({{"g", v_prev}}), 1.0);
            const double ratio = value / (0.5 * eps * eps * quad);
            CHECK(std::abs(ratio - 1.0) < 0.05);
        }
    }
    SUBCASE("variance identity is exact") {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 2 + trial % 10;
            Vector logits(n), delta(n);
            for (double& x : logits) x = gauss(engine);
            for (double& x : delta) x = gauss(engine);
            const Vector p = softmax(logits);
            const Matrix h = kl_local_hessian(logits);
            const double quad = dot(delta, matvec(h, delta));
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += p[i] * delta[i];
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += p[i] * (delta[i] - mu) * (delta[i] - mu);
            CHECK(std::abs(quad - var) < 1e-12);
        }
    }
}

TEST_CASE("per_rank_plan covers each coordinate exactly once") {
    const std::vector<SiteShapes> sites = {{"enc", 2, 3, 4}, {"dec", 3, 2, 2}};
    const GroupingPlan plan = per_rank_plan(sites);
    // enc: 2 A-rows + 2 B-cols, dec: 3 + 3
    CHECK(plan.groups.size() == 10);
    std::vector<int> seen(plan.source_dim, 0);
    for (const auto& g : plan.groups)
        for (std::size_t idx : g.indices) seen[idx] += 1;
    for (int c : seen) CHECK(c == 1);
    CHECK(plan.source_dim == 2 * 3 + 4 * 2 + 3 * 2 + 2 * 3);
}
