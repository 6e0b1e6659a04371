#include "dfacto/dense_ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dfacto {

Matrix khatri_rao(const Matrix& P, const Matrix& Q) {
  if (P.cols() != Q.cols()) throw std::invalid_argument("khatri_rao: column counts differ");
  const Eigen::Index qr = Q.rows();
  Matrix out(P.rows() * qr, P.cols());
  for (Eigen::Index r = 0; r < P.cols(); ++r) {
    for (Eigen::Index p = 0; p < P.rows(); ++p) {
      out.col(r).segment(p * qr, qr) = P(p, r) * Q.col(r);
    }
  }
  return out;
}

Matrix gram_hadamard(const Matrix& P, const Matrix& Q, double ridge) {
  if (P.rows() != P.cols() || P.rows() != Q.rows() || P.cols() != Q.cols()) {
    throw std::invalid_argument("gram_hadamard: expected two R x R matrices of equal size");
  }
  Matrix out = P.cwiseProduct(Q);
  out.diagonal().array() += ridge;
  return out;
}

Vector normalize_columns(Matrix& M) {
  Vector norms(M.cols());
  for (Eigen::Index r = 0; r < M.cols(); ++r) {
    const double n = M.col(r).norm();
    norms(r) = n;
    if (n > 0.0) M.col(r) /= n;
  }
  return norms;
}

GramSolve solve_gram(const Matrix& N, const Matrix& G) {
  if (G.rows() != G.cols() || N.cols() != G.rows()) throw std::invalid_argument("solve_gram: shape mismatch");
  GramSolve out;
  // X G = N  <=>  G X^T = N^T since G is symmetric.
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() == Eigen::Success) {
    const double rcond = llt.rcond();
    if (std::isfinite(rcond) && rcond > 64 * std::numeric_limits<double>::epsilon()) {
      out.x = llt.solve(N.transpose()).transpose();
      return out;
    }
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G);
  out.x = cod.solve(N.transpose()).transpose();
  out.used_pseudo_inverse = true;
  return out;
}

}  // namespace dfacto
