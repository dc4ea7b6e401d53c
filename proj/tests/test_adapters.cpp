#include <random>

#include "doctest.h"
#include "peso/adapters.hpp"
#include "peso/linalg.hpp"

using namespace peso;

namespace {

Matrix random_mat(std::size_t r, std::size_t c, std::mt19937_64& engine, double std_dev = 1.0) {
    std::normal_distribution<double> gauss(0.0, std_dev);
    Matrix m(r, c);
    for (double& v : m.flat()) v = gauss(engine);
    return m;
}

AdapterStack make_stack(Policy policy, std::size_t rank, std::size_t d, std::mt19937_64& engine) {
    AdapterStack s;
    s.site_id = "site";
    s.policy = policy;
    s.live.site_id = "site";
    s.live.rank = rank;
    s.live.a = random_mat(rank, d, engine);
    s.live.b = random_mat(d, rank, engine);
    return s;
}

}  // namespace

TEST_CASE("effective_delta basics") {
    std::mt19937_64 engine(3);
    SUBCASE("empty frozen list with zero B is the zero matrix") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 3, engine);
        s.live.b = Matrix(3, 2);
        const Matrix delta = effective_delta(s);
        for (double v : delta.flat()) CHECK(v == 0.0);
    }
    SUBCASE("live term vanishes, single frozen entry remains") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 3, engine);
        s.live.b = Matrix(3, 2);
        FrozenEntry e;
        e.a_hat = random_mat(2, 3, engine);
        e.a_hat *= 1.0 / e.a_hat.frobenius_norm();
        e.b_hat = random_mat(3, 2, engine);
        e.b_hat *= 1.0 / e.b_hat.frobenius_norm();
        e.alpha = 1.0;
        s.frozen.push_back(e);
        const Matrix delta = effective_delta(s);
        const Matrix expected = matmul(e.b_hat, e.a_hat);
        CHECK((delta - expected).frobenius_norm() < 1e-14);
    }
    SUBCASE("sum_latest uses only the final frozen entry") {
        AdapterStack s = make_stack(Policy::SumLatest, 2, 3, engine);
        FrozenEntry e1, e2;
        e1.a_hat = random_mat(2, 3, engine);
        e1.b_hat = random_mat(3, 2, engine);
        e1.alpha = 2.0;
        e2.a_hat = random_mat(2, 3, engine);
        e2.b_hat = random_mat(3, 2, engine);
        e2.alpha = 0.0;
        s.frozen = {e1, e2};
        // Oracle: explicit sum over the contributing index only (i = t−1).
        Matrix expected = matmul(s.live.b, s.live.a);
        expected += e2.alpha * matmul(e2.b_hat, e2.a_hat);
        CHECK((effective_delta(s) - expected).frobenius_norm() < 1e-14);

        s.policy = Policy::SumAll;
        Matrix with_all = matmul(s.live.b, s.live.a);
        with_all += e1.alpha * matmul(e1.b_hat, e1.a_hat);
        with_all += e2.alpha * matmul(e2.b_hat, e2.a_hat);
        CHECK((effective_delta(s) - with_all).frobenius_norm() < 1e-14);
    }
}

TEST_CASE("effective_delta invariants") {
    std::mt19937_64 engine(5);
    SUBCASE("zero frozen history: every policy equals the plain LoRA delta") {
        for (Policy p : {Policy::SingleEvolving, Policy::SumAll, Policy::SdLatestInherit,
                         Policy::InfAll, Policy::Peso}) {
            AdapterStack s = make_stack(p, 2, 4, engine);
            const Matrix expected = matmul(s.live.b, s.live.a);
            CHECK((effective_delta(s) - expected).frobenius_norm() == 0.0);
        }
    }
    SUBCASE("sum_all with all alphas zero equals single_evolving") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 4, engine);
        for (int i = 0; i < 3; ++i) {
            FrozenEntry e;
            e.a_hat = random_mat(2, 4, engine);
            e.b_hat = random_mat(4, 2, engine);
            e.alpha = 0.0;
            s.frozen.push_back(e);
        }
        AdapterStack single = s;
        single.policy = Policy::SingleEvolving;
        single.frozen.clear();
        CHECK((effective_delta(s) - effective_delta(single)).frobenius_norm() == 0.0);
    }
}

TEST_CASE("seal_stage normalization and inheritance") {
    std::mt19937_64 engine(9);
    SealOptions opts;

    SUBCASE("B = [[3],[4]] normalizes to [[0.6],[0.8]]") {
        AdapterStack s = make_stack(Policy::SumAll, 1, 2, engine);
        LoraAdapter trained = s.live;
        trained.b = Matrix::from_rows(2, 1, {3, 4});
        trained.a = Matrix::from_rows(1, 2, {1, 0});
        const AdapterStack sealed = seal_stage(s, trained, false, opts, engine);
        REQUIRE(sealed.frozen.size() == 1);
        CHECK(sealed.frozen[0].b_hat(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(sealed.frozen[0].b_hat(1, 0) == doctest::Approx(0.8).epsilon(1e-12));
    }
    SUBCASE("fresh initialization draws A and zeroes B") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 4, engine);
        const LoraAdapter trained = s.live;
        const AdapterStack sealed = seal_stage(s, trained, false, opts, engine);
        CHECK((sealed.live.a - trained.a).frobenius_norm() > 0.0);
        for (double v : sealed.live.b.flat()) CHECK(v == 0.0);
        // init scale sanity: entries should be O(0.02), far below the trained O(1)
        CHECK(sealed.live.a.frobenius_norm() < 0.5);
    }
    SUBCASE("inherit copies the trained factors") {
        AdapterStack s = make_stack(Policy::SumAllInherit, 2, 4, engine);
        const LoraAdapter trained = s.live;
        const AdapterStack sealed = seal_stage(s, trained, true, opts, engine);
        CHECK(sealed.live.a == trained.a);
        CHECK(sealed.live.b == trained.b);
    }
    SUBCASE("sealing twice grows frozen by exactly one each time") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 4, engine);
        const AdapterStack s1 = seal_stage(s, s.live, false, opts, engine);
        CHECK(s1.frozen.size() == 1);
        AdapterStack s1_trained = s1;
        s1_trained.live = make_stack(Policy::SumAll, 2, 4, engine).live;
        const AdapterStack s2 = seal_stage(s1, s1_trained.live, false, opts, engine);
        CHECK(s2.frozen.size() == 2);
    }
    SUBCASE("zero-norm factor cannot be normalized") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 4, engine);
        LoraAdapter trained = s.live;
        trained.b = Matrix(4, 2);
        CHECK_THROWS_AS(seal_stage(s, trained, false, opts, engine), NumericError);
    }
    SUBCASE("sealed factors have unit Frobenius norm") {
        for (Policy p : {Policy::SumAll, Policy::SdLatest, Policy::SumLatestInherit}) {
            AdapterStack s = make_stack(p, 3, 5, engine);
            const AdapterStack sealed = seal_stage(s, s.live, policy_inherits(p), opts, engine);
            CHECK(std::abs(sealed.frozen.back().a_hat.frobenius_norm() - 1.0) < 1e-10);
            CHECK(std::abs(sealed.frozen.back().b_hat.frobenius_norm() - 1.0) < 1e-10);
        }
    }
    SUBCASE("sum seal is function-preserving") {
        AdapterStack s = make_stack(Policy::SumAll, 2, 4, engine);
        const Matrix before = effective_delta(s);
        const AdapterStack sealed = seal_stage(s, s.live, false, opts, engine);
        // frozen sum alone reproduces the trained delta; live starts with B = 0
        CHECK((effective_delta(sealed) - before).frobenius_norm() < 1e-12);
    }
    SUBCASE("sd paper mode seals alpha at 1, preserve mode at the norm product") {
        AdapterStack s = make_stack(Policy::SdAll, 2, 4, engine);
        SealOptions paper;
        paper.sd_alpha_mode = SdAlphaMode::PaperInit;
        CHECK(seal_stage(s, s.live, false, paper, engine).frozen[0].alpha == 1.0);
        SealOptions preserve;
        preserve.sd_alpha_mode = SdAlphaMode::FunctionPreserve;
        const double expected = s.live.a.frobenius_norm() * s.live.b.frobenius_norm();
        CHECK(seal_stage(s, s.live, false, preserve, engine).frozen[0].alpha ==
              doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("inf family seals raw factors with alpha 1") {
        AdapterStack s = make_stack(Policy::InfAll, 2, 4, engine);
        const AdapterStack sealed = seal_stage(s, s.live, false, opts, engine);
        CHECK(sealed.frozen[0].alpha == 1.0);
        CHECK(sealed.frozen[0].a_hat == s.live.a);
    }
    SUBCASE("trim_history keeps only the usable entry for latest policies") {
        AdapterStack s = make_stack(Policy::SumLatest, 2, 4, engine);
        SealOptions trim;
        trim.trim_history = true;
        AdapterStack sealed = seal_stage(s, s.live, false, trim, engine);
        sealed.live = make_stack(Policy::SumLatest, 2, 4, engine).live;
        sealed = seal_stage(sealed, sealed.live, false, trim, engine);
        CHECK(sealed.frozen.size() == 1);
    }
}

TEST_CASE("inflora_init") {
    SUBCASE("rank-1 covariance aligns with e1") {
        const std::vector<Vector> inputs(5, Vector{1, 0, 0});
        const LoraAdapter a = inflora_init("enc", inputs, 1, 3);
        CHECK(std::abs(a.a(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(a.a(0, 1)) < 1e-10);
        CHECK_FALSE(a.a_trainable);
        for (double v : a.b.flat()) CHECK(v == 0.0);
    }
    SUBCASE("isotropic 2-D covariance spans both axes") {
        const std::vector<Vector> inputs = {{1, 0}, {0, 1}, {1, 0}, {0, 1}};
        const LoraAdapter a = inflora_init("enc", inputs, 2, 2);
        // rows orthonormal and spanning
        const double det = a.a(0, 0) * a.a(1, 1) - a.a(0, 1) * a.a(1, 0);
        CHECK(std::abs(std::abs(det) - 1.0) < 1e-9);
    }
    SUBCASE("anisotropic cloud aligns with the top covariance eigenvector") {
        std::mt19937_64 engine(21);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<Vector> inputs;
        for (int i = 0; i < 400; ++i) {
            const double t = gauss(engine);
            const double n1 = 0.05 * gauss(engine);
            const double n2 = 0.05 * gauss(engine);
            // dominant direction (3,4)/5
            inputs.push_back({3.0 / 5 * t + n1, 4.0 / 5 * t + n2});
        }
        const LoraAdapter a = inflora_init("enc", inputs, 1, 2);

        // Oracle: sym_eig of the empirical covariance.
        Matrix cov(2, 2);
        for (const Vector& x : inputs)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j) cov(i, j) += x[i] * x[j];
        cov *= 1.0 / static_cast<double>(inputs.size());
        const linalg::EigenPairs ep = linalg::sym_eig(cov);
        const double cosine =
            std::abs(a.a(0, 0) * ep.vectors(0, 0) + a.a(0, 1) * ep.vectors(1, 0));
        CHECK(std::acos(std::min(cosine, 1.0)) < 1e-6);
    }
    SUBCASE("fewer than rank inputs is a precondition error") {
        CHECK_THROWS_AS(inflora_init("enc", {{1.0, 0.0}}, 2, 2), PreconditionError);
    }
}

TEST_CASE("pack and unpack") {
    std::mt19937_64 engine(33);
    std::vector<AdapterStack> stacks;
    for (const char* id : {"enc", "dec"}) {
        AdapterStack s = make_stack(Policy::Peso, 1, 2, engine);
        s.site_id = id;
        s.live.site_id = id;
        stacks.push_back(std::move(s));
    }

    SUBCASE("two rank-1 2x2 sites give G=4 groups and m=8") {
        const ParamVector v = pack(stacks);
        CHECK(v.group_count() == 4);
        CHECK(v.total_dim() == 8);
        CHECK(v.group(0).id == "enc.A");
        CHECK(v.group(1).id == "enc.B");
        CHECK(v.group(2).id == "dec.A");
        CHECK(v.group(3).id == "dec.B");
        for (std::size_t g = 0; g < 4; ++g) CHECK(v.group(g).values.size() == 2);
    }
    SUBCASE("pack after unpack is the identity on random vectors") {
        std::normal_distribution<double> gauss(0.0, 1.0);
        ParamVector v = pack(stacks);
        for (auto& g : v.groups())
            for (double& x : g.values) x = gauss(engine);
        unpack(v, stacks);
        CHECK(pack(stacks) == v);
    }
    SUBCASE("unpack rejects mismatched shape") {
        ParamVector v = pack(stacks);
        v.group(0).values.push_back(0.0);
        CHECK_THROWS_AS(unpack(v, stacks), PreconditionError);
    }
}

TEST_CASE("policy table") {
    CHECK(parse_policy("sum_latest_inherit") == Policy::SumLatestInherit);
    CHECK(policy_name(Policy::SdAllInherit) == "sd_all_inherit");
    CHECK_THROWS_AS(parse_policy("nope"), PreconditionError);
    CHECK(policy_inherits(Policy::Peso));
    CHECK(policy_inherits(Policy::SingleEvolving));
    CHECK_FALSE(policy_inherits(Policy::SumAll));
    CHECK(policy_trains_magnitudes(Policy::SdLatest));
    CHECK(policy_fixes_a(Policy::InfAllInherit));
    CHECK_FALSE(policy_is_cumulative(Policy::Peso));
}
