#pragma once

#include "peso/matrix.hpp"

namespace peso::linalg {

/// Eigenvalues in descending order with matching eigenvector columns.
struct EigenPairs {
    Vector values;   // descending
    Matrix vectors;  // column k pairs with values[k]
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Throws PreconditionError if M is not symmetric within 1e-12 relative,
/// NumericError if the off-diagonal norm has not converged after 100 sweeps.
EigenPairs sym_eig(const Matrix& m);

/// Solves M x = b for symmetric positive definite M via Cholesky.
/// Throws FactorizationError naming the failing pivot if M is not SPD.
Vector spd_solve(const Matrix& m, const Vector& b);

/// Cholesky factor L with M = L Lᵀ; shared by spd_solve and callers that
/// only need the factorization to certify positive definiteness.
Matrix cholesky(const Matrix& m);

/// Generalized eigenpairs of (S, H) on range(H): S q = ρ H q with qᵢᵀHqⱼ = δᵢⱼ.
/// H may be singular; eigendirections of H below 1e-10 of its largest
/// eigenvalue are treated as kernel and dropped, so rank(H) pairs return.
EigenPairs gen_eig(const Matrix& s, const Matrix& h);

struct Svd {
    Vector singular_values;  // descending, length k
    Matrix left;             // columns u_k
    Matrix right;            // columns v_k
};

/// Top-k singular triplets of M, computed through sym_eig of the Gram matrix
/// of the smaller side. Throws PreconditionError if k > min(rows, cols).
Svd svd_topk(const Matrix& m, std::size_t k);

}  // namespace peso::linalg
