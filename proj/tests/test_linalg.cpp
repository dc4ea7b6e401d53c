#include <cmath>
#include <random>

#include "doctest.h"
#include "peso/linalg.hpp"

using namespace peso;
using namespace peso::linalg;

namespace {

Matrix random_symmetric(std::size_t n, std::mt19937_64& engine) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = gauss(engine);
            m(i, j) = v;
            m(j, i) = v;
        }
    return m;
}

double reconstruction_error(const Matrix& m, const EigenPairs& ep) {
    // ‖M − VΛVᵀ‖_F / ‖M‖_F
    Matrix rec(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < ep.values.size(); ++k)
                s += ep.vectors(i, k) * ep.values[k] * ep.vectors(j, k);
            rec(i, j) = s;
        }
    return (rec - m).frobenius_norm() / std::max(m.frobenius_norm(), 1e-300);
}

}  // namespace

TEST_CASE("sym_eig diagonal and identity") {
    const EigenPairs d = sym_eig(Matrix::diag({2.0, 1.0}));
    CHECK(d.values[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(d.values[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(d.vectors(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(d.vectors(1, 1)) == doctest::Approx(1.0));

    const EigenPairs id = sym_eig(Matrix::identity(3));
    for (double v : id.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sym_eig 2x2 against characteristic polynomial") {
    // det([[2-l,1],[1,2-l]]) = l^2 - 4l + 3 → l = 3, 1; eigvecs (1,1)/√2, (1,−1)/√2.
    const Matrix m = Matrix::from_rows(2, 2, {2, 1, 1, 2});
    const EigenPairs ep = sym_eig(m);
    CHECK(ep.values[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(ep.values[1] == doctest::Approx(1.0).epsilon(1e-12));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(std::abs(ep.vectors(0, 0)) == doctest::Approx(inv_sqrt2).epsilon(1e-10));
    CHECK(std::abs(ep.vectors(1, 0)) == doctest::Approx(inv_sqrt2).epsilon(1e-10));
    CHECK(ep.vectors(0, 0) * ep.vectors(1, 0) > 0.0);   // same sign
    CHECK(ep.vectors(0, 1) * ep.vectors(1, 1) < 0.0);   // opposite sign
}

TEST_CASE("sym_eig rejects non-symmetric input") {
    const Matrix m = Matrix::from_rows(2, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(sym_eig(m), PreconditionError);
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
    std::mt19937_64 engine(7);
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = dim(engine);
        const Matrix m = random_symmetric(n, engine);
        const EigenPairs ep = sym_eig(m);
        CHECK(reconstruction_error(m, ep) < 1e-9);
        // orthonormal columns
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a; b < n; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += ep.vectors(i, a) * ep.vectors(i, b);
                CHECK(std::abs(s - (a == b ? 1.0 : 0.0)) < 1e-10);
            }
    }
}

TEST_CASE("spd_solve examples") {
    CHECK(spd_solve(Matrix::identity(2), {3, 4})[0] == doctest::Approx(3.0));
    CHECK(spd_solve(Matrix::identity(2), {3, 4})[1] == doctest::Approx(4.0));

    const Vector x = spd_solve(Matrix::diag({4, 9}), {8, 9});
    CHECK(x[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));

    // [[2,1],[1,2]]·(1,1) = (3,3), so the solve must return (1,1).
    const Vector y = spd_solve(Matrix::from_rows(2, 2, {2, 1, 1, 2}), {3, 3});
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spd_solve names the failing pivot") {
    const Matrix indefinite = Matrix::from_rows(2, 2, {1, 0, 0, -1});
    try {
        spd_solve(indefinite, {1, 1});
        FAIL("expected FactorizationError");
    } catch (const FactorizationError& e) {
        CHECK(e.pivot_index == 1);
        CHECK(std::string(e.what()).find("pivot 1") != std::string::npos);
    }
}

TEST_CASE("spd_solve round-trips random SPD systems") {
    std::mt19937_64 engine(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + trial % 12;
        Matrix r(n, n);
        for (double& v : r.flat()) v = gauss(engine);
        Matrix m = matmul(r.transposed(), r);
        for (std::size_t i = 0; i < n; ++i) m(i, i) += 1e-3;
        Vector b(n);
        for (double& v : b) v = gauss(engine);
        const Vector x = spd_solve(m, b);
        const Vector back = matvec(m, x);
        double resid = 0.0;
        for (std::size_t i = 0; i < n; ++i) resid = std::max(resid, std::abs(back[i] - b[i]));
        CHECK(resid <= 1e-9 * (1.0 + norm_inf(b)));
    }
}

TEST_CASE("gen_eig examples") {
    SUBCASE("H = I reduces to sym_eig") {
        const EigenPairs ep = gen_eig(Matrix::diag({4, 1}), Matrix::identity(2));
        CHECK(ep.values[0] == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(ep.values[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("coordinate-wise solve of Sq = rho Hq") {
        // S = I, H = diag(4,1): along e1, 1 = 4ρ → ρ = 1/4 with q = e1/2;
        // along e2, ρ = 1 with q = e2. Descending: (1, 1/4).
        const EigenPairs ep = gen_eig(Matrix::identity(2), Matrix::diag({4, 1}));
        REQUIRE(ep.values.size() == 2);
        CHECK(ep.values[0] == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(ep.values[1] == doctest::Approx(0.25).epsilon(1e-10));
        CHECK(std::abs(ep.vectors(1, 0)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(ep.vectors(0, 1)) == doctest::Approx(0.5).epsilon(1e-10));
    }
    SUBCASE("zero operator") {
        const EigenPairs ep = gen_eig(Matrix(2, 2), Matrix::identity(2));
        for (double v : ep.values) CHECK(std::abs(v) < 1e-12);
    }
}

TEST_CASE("gen_eig satisfies residual and H-orthonormality on random PSD pairs") {
    std::mt19937_64 engine(13);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + trial % 8;
        Matrix rs(n, n), rh(n, n);
        for (double& v : rs.flat()) v = gauss(engine);
        for (double& v : rh.flat()) v = gauss(engine);
        const Matrix s = matmul(rs.transposed(), rs);
        Matrix h = matmul(rh.transposed(), rh);
        for (std::size_t i = 0; i < n; ++i) h(i, i) += 1e-2;

        const EigenPairs ep = gen_eig(s, h);
        REQUIRE(ep.values.size() == n);
        for (std::size_t k = 0; k < n; ++k) {
            Vector q(n);
            for (std::size_t i = 0; i < n; ++i) q[i] = ep.vectors(i, k);
            const Vector sq = matvec(s, q);
            const Vector hq = matvec(h, q);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(std::abs(sq[i] - ep.values[k] * hq[i]) < 1e-8 * (1.0 + std::abs(sq[i])));
        }
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a; b < n; ++b) {
                Vector qa(n), qb(n);
                for (std::size_t i = 0; i < n; ++i) {
                    qa[i] = ep.vectors(i, a);
                    qb[i] = ep.vectors(i, b);
                }
                const double ip = dot(qa, matvec(h, qb));
                CHECK(std::abs(ip - (a == b ? 1.0 : 0.0)) < 1e-8);
            }
    }
}

TEST_CASE("gen_eig with H = I agrees with sym_eig") {
    std::mt19937_64 engine(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 10;
        const Matrix m = random_symmetric(n, engine);
        const EigenPairs a = sym_eig(m);
        const EigenPairs b = gen_eig(m, Matrix::identity(n));
        for (std::size_t k = 0; k < n; ++k)
            CHECK(std::abs(a.values[k] - b.values[k]) < 1e-9 * (1.0 + std::abs(a.values[k])));
    }
}

TEST_CASE("svd_topk examples") {
    const auto d = svd_topk(Matrix::diag({3, 2}), 1);
    CHECK(d.singular_values[0] == doctest::Approx(3.0).epsilon(1e-10));

    const auto id = svd_topk(Matrix::identity(2), 2);
    CHECK(id.singular_values[0] == doctest::Approx(1.0));
    CHECK(id.singular_values[1] == doctest::Approx(1.0));

    // MᵀM of [[0,2],[1,0]] is diag(1,4) → singular values (2, 1).
    const auto m = svd_topk(Matrix::from_rows(2, 2, {0, 2, 1, 0}), 2);
    CHECK(m.singular_values[0] == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(m.singular_values[1] == doctest::Approx(1.0).epsilon(1e-10));

    CHECK_THROWS_AS(svd_topk(Matrix::identity(2), 3), PreconditionError);
}

TEST_CASE("svd_topk reconstruction matches the Gram-eig oracle") {
    std::mt19937_64 engine(19);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = 2 + trial % 5;
        const std::size_t c = 2 + (trial * 3) % 6;
        Matrix m(r, c);
        for (double& v : m.flat()) v = gauss(engine);
        const std::size_t k = std::min(r, c);
        const auto svd = svd_topk(m, k);

        // Oracle: squared singular values are the eigenvalues of MᵀM.
        const EigenPairs gram = sym_eig(matmul(m.transposed(), m));
        for (std::size_t i = 0; i < k; ++i) {
            const double expected = std::sqrt(std::max(gram.values[i], 0.0));
            CHECK(std::abs(svd.singular_values[i] - expected) < 1e-8 * (1.0 + expected));
        }
        // Full reconstruction Σ σ u vᵀ recovers M.
        Matrix rec(r, c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < k; ++t)
                    s += svd.singular_values[t] * svd.left(i, t) * svd.right(j, t);
                rec(i, j) = s;
            }
        CHECK((rec - m).frobenius_norm() < 1e-8 * (1.0 + m.frobenius_norm()));
    }
}
