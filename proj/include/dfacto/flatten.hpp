#pragma once

#include <array>
#include <vector>

#include "dfacto/csr_matrix.hpp"
#include "dfacto/sparse_tensor.hpp"

namespace dfacto {

/// Mode-n flattening as CSR. Zero-based mapping:
///   mode 1: x(i,j,k) -> X1[i, j + k*J]   (I x JK)
///   mode 2: x(i,j,k) -> X2[j, k + i*K]   (J x KI)
///   mode 3: x(i,j,k) -> X3[k, i + j*I]   (K x IJ)
/// Throws std::invalid_argument for a mode outside {1,2,3}.
CsrMatrix flatten_mode(const SparseTensor& t, int mode);

/// The three flattenings of one tensor together with their compressed
/// transposes. `xt(n)` is the transpose of `x(n)` with every row that holds
/// no nonzero removed; `rowmap(n)[r]` is the original (uncompressed) row
/// index of row r, i.e. a flat column index of `x(n)`.
class FlattenedViews {
 public:
  FlattenedViews() = default;
  explicit FlattenedViews(const SparseTensor& t);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t nnz() const noexcept { return x_[0].nnz(); }

  const CsrMatrix& x(int mode) const { return x_.at(mode - 1); }
  const CsrMatrix& xt(int mode) const { return xt_.at(mode - 1); }
  const std::vector<Index>& rowmap(int mode) const { return rowmap_.at(mode - 1); }

  /// Squared Frobenius norm of the tensor.
  double norm_squared() const noexcept { return norm_sq_; }

 private:
  Dims dims_;
  std::array<CsrMatrix, 3> x_;
  std::array<CsrMatrix, 3> xt_;
  std::array<std::vector<Index>, 3> rowmap_;
  double norm_sq_ = 0.0;
};

inline FlattenedViews build_views(const SparseTensor& t) { return FlattenedViews(t); }

}  // namespace dfacto
