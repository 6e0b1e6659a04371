#pragma once

#include <span>
#include <vector>

#include "dfacto/sparse_tensor.hpp"

namespace dfacto {

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within a row. Stored values may be
/// zero; the pattern, not the value, decides what is stored.
struct CsrMatrix {
  Index nrows = 0;
  Index ncols = 0;
  std::vector<Index> rowptr{0};
  std::vector<Index> columns;
  std::vector<double> values;

  std::size_t nnz() const noexcept { return values.size(); }

  std::span<const Index> row_columns(Index r) const {
    return {columns.data() + rowptr[r], static_cast<std::size_t>(rowptr[r + 1] - rowptr[r])};
  }
  std::span<const double> row_values(Index r) const {
    return {values.data() + rowptr[r], static_cast<std::size_t>(rowptr[r + 1] - rowptr[r])};
  }

  /// Value at (r, c), zero if not stored. Binary search within the row.
  double at(Index r, Index c) const;

  /// Checks the structural invariants; throws std::logic_error on violation.
  void validate() const;

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;
};

struct Triplet {
  Index row;
  Index col;
  double value;
};

/// Builds a canonical CSR matrix from triplets. The (row, col) pairs must be
/// unique.
CsrMatrix csr_from_triplets(Index nrows, Index ncols, std::span<const Triplet> triplets);

/// Number of columns holding at least one nonzero value. Explicit zeros do not count.
Index nnzc(const CsrMatrix& m);

/// Number of rows holding at least one nonzero value.
Index nnzr(const CsrMatrix& m);

/// Full transpose (all rows kept).
CsrMatrix transpose(const CsrMatrix& m);

/// Transpose with the rows that hold no nonzero value dropped. `rowmap`
/// receives, for each kept row, its index in the full transpose.
CsrMatrix compressed_transpose(const CsrMatrix& m, std::vector<Index>& rowmap);

/// y = m * x.
void spmv(const CsrMatrix& m, std::span<const double> x, std::span<double> y);

}  // namespace dfacto
