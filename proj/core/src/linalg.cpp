#include "peso/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peso::linalg {

namespace {

constexpr int kMaxJacobiSweeps = 100;
// Relative off-diagonal floor. Near machine epsilon rather than the looser
// 1e-12: whitened generalized problems scale the spectrum by 1/h_min, and the
// interpolation certificates need eigenvectors accurate at that scale.
constexpr double kOffDiagTol = 1e-15;

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
}

void require_symmetric(const Matrix& m, const char* op) {
    if (m.rows() != m.cols()) throw PreconditionError(std::string(op) + ": matrix not square");
    double scale = 0.0;
    for (double v : m.flat()) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * std::max(scale, 1.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol)
                throw PreconditionError(std::string(op) + ": matrix not symmetric");
}

// Sorts (value, column) pairs descending and permutes vector columns to match.
EigenPairs sorted_pairs(Vector values, const Matrix& vectors) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    EigenPairs out;
    out.values.resize(n);
    out.vectors = Matrix(vectors.rows(), n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = values[order[k]];
        for (std::size_t i = 0; i < vectors.rows(); ++i) out.vectors(i, k) = vectors(i, order[k]);
    }
    return out;
}

}  // namespace

EigenPairs sym_eig(const Matrix& m) {
    require_symmetric(m, "sym_eig");
    const std::size_t n = m.rows();
    if (n == 0) return {};

    Matrix a = m;
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    Matrix v = Matrix::identity(n);

    const double frob = std::max(a.frobenius_norm(), 1e-300);
    double prev_off = off_diagonal_norm(a);
    bool converged = prev_off <= kOffDiagTol * frob;
    for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double theta = 0.5 * (aqq - app) / apq;
                double t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                if (theta < 0.0) t = -t;
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
        const double off = off_diagonal_norm(a);
        if (off <= kOffDiagTol * frob) {
            converged = true;
        } else if (off >= 0.5 * prev_off && off <= 1e-11 * frob) {
            converged = true;  // stalled at this matrix's rounding floor
        }
        prev_off = off;
    }
    if (!converged) throw NumericError("sym_eig: Jacobi iteration did not converge in 100 sweeps");

    Vector values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
    return sorted_pairs(std::move(values), v);
}

Matrix cholesky(const Matrix& m) {
    require_symmetric(m, "cholesky");
    const std::size_t n = m.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw FactorizationError("cholesky: matrix not positive definite",
                                     static_cast<long>(j));
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Vector spd_solve(const Matrix& m, const Vector& b) {
    if (m.rows() != b.size()) throw PreconditionError("spd_solve: dimension mismatch");
    const Matrix l = cholesky(m);
    const std::size_t n = b.size();
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

EigenPairs gen_eig(const Matrix& s, const Matrix& h) {
    require_symmetric(s, "gen_eig");
    require_symmetric(h, "gen_eig");
    if (s.rows() != h.rows()) throw PreconditionError("gen_eig: dimension mismatch");
    const std::size_t n = h.rows();

    // Whiten on range(H): W = Q_r Λ_r^{-1/2}, project S, and diagonalize.
    const EigenPairs eh = sym_eig(h);
    const double hmax = eh.values.empty() ? 0.0 : std::max(eh.values.front(), 0.0);
    const double cut = 1e-10 * hmax;
    std::size_t r = 0;
    while (r < eh.values.size() && eh.values[r] > cut) ++r;
    if (r == 0) return {Vector{}, Matrix(n, 0)};

    Matrix w(n, r);
    for (std::size_t k = 0; k < r; ++k) {
        const double inv_sqrt = 1.0 / std::sqrt(eh.values[k]);
        for (std::size_t i = 0; i < n; ++i) w(i, k) = eh.vectors(i, k) * inv_sqrt;
    }
    const Matrix projected = matmul(matmul(w.transposed(), s), w);
    // Symmetrize roundoff before the inner eigensolve.
    Matrix t(r, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) t(i, j) = 0.5 * (projected(i, j) + projected(j, i));

    const EigenPairs et = sym_eig(t);
    EigenPairs out;
    out.values = et.values;
    out.vectors = matmul(w, et.vectors);
    return out;
}

Svd svd_topk(const Matrix& m, std::size_t k) {
    const std::size_t nr = m.rows();
    const std::size_t nc = m.cols();
    if (k > std::min(nr, nc)) throw PreconditionError("svd_topk: k exceeds min(rows, cols)");

    // Work on the smaller Gram matrix.
    const bool use_right = nc <= nr;
    const Matrix gram = use_right ? matmul(m.transposed(), m) : matmul(m, m.transposed());
    Matrix sym(gram.rows(), gram.cols());
    for (std::size_t i = 0; i < gram.rows(); ++i)
        for (std::size_t j = 0; j < gram.cols(); ++j) sym(i, j) = 0.5 * (gram(i, j) + gram(j, i));
    const EigenPairs ep = sym_eig(sym);

    Svd out;
    out.singular_values.resize(k);
    out.left = Matrix(nr, k);
    out.right = Matrix(nc, k);
    for (std::size_t i = 0; i < k; ++i) {
        const double sigma = std::sqrt(std::max(ep.values[i], 0.0));
        out.singular_values[i] = sigma;
        Vector v(ep.vectors.rows());
        for (std::size_t r = 0; r < v.size(); ++r) v[r] = ep.vectors(r, i);
        if (use_right) {
            for (std::size_t r = 0; r < nc; ++r) out.right(r, i) = v[r];
            if (sigma > 1e-13) {
                const Vector u = matvec(m, v);
                for (std::size_t r = 0; r < nr; ++r) out.left(r, i) = u[r] / sigma;
            }
        } else {
            for (std::size_t r = 0; r < nr; ++r) out.left(r, i) = v[r];
            if (sigma > 1e-13) {
                const Vector u = matvec_t(m, v);
                for (std::size_t r = 0; r < nc; ++r) out.right(r, i) = u[r] / sigma;
            }
        }
    }
    return out;
}

}  // namespace peso::linalg
