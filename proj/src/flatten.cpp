#include "dfacto/flatten.hpp"

#include <stdexcept>

namespace dfacto {

CsrMatrix flatten_mode(const SparseTensor& t, int mode) {
  const Dims& d = t.dims();
  std::vector<Triplet> trips;
  trips.reserve(t.nnz());
  Index rows = 0, cols = 0;
  switch (mode) {
    case 1:
      rows = d.i;
      cols = d.j * d.k;
      for (const auto& e : t.entries()) trips.push_back({e.i, e.j + e.k * d.j, e.value});
      break;
    case 2:
      rows = d.j;
      cols = d.k * d.i;
      for (const auto& e : t.entries()) trips.push_back({e.j, e.k + e.i * d.k, e.value});
      break;
    case 3:
      rows = d.k;
      cols = d.i * d.j;
      for (const auto& e : t.entries()) trips.push_back({e.k, e.i + e.j * d.i, e.value});
      break;
    default:
      throw std::invalid_argument("flatten_mode: mode must be 1, 2 or 3");
  }
  return csr_from_triplets(rows, cols, trips);
}

FlattenedViews::FlattenedViews(const SparseTensor& t) : dims_(t.dims()), norm_sq_(t.norm_squared()) {
  for (int n = 1; n <= 3; ++n) {
    x_[n - 1] = flatten_mode(t, n);
    xt_[n - 1] = compressed_transpose(x_[n - 1], rowmap_[n - 1]);
  }
}

}  // namespace dfacto
