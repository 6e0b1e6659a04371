#pragma once

#include <Eigen/Dense>

namespace dfacto {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Columnwise Kronecker product. Row p*Q.rows() + q of the result is
/// P.row(p) .* Q.row(q), so khatri_rao(C, B) has row j + k*J equal to
/// c_k .* b_j, matching the mode-1 flattening layout.
Matrix khatri_rao(const Matrix& P, const Matrix& Q);

/// P .* Q + ridge * I for two R x R Gram matrices.
Matrix gram_hadamard(const Matrix& P, const Matrix& Q, double ridge = 0.0);

/// Divides each column by its L2 norm in place and returns the norms. A zero
/// column is left untouched and reports norm 0.
Vector normalize_columns(Matrix& M);

/// Result of solving X * G = N for X.
struct GramSolve {
  Matrix x;
  bool used_pseudo_inverse = false;
};

/// Solves X * G = N with G symmetric positive semi-definite (R x R). Uses a
/// Cholesky factorization; when G is singular or numerically indefinite it
/// falls back to the minimum-norm least-squares solution.
GramSolve solve_gram(const Matrix& N, const Matrix& G);

}  // namespace dfacto
