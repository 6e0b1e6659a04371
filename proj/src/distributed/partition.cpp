#include "dfacto/distributed/partition.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "dfacto/mttkrp.hpp"

namespace dfacto {

std::vector<RowRange> greedy_prefix_split(std::span<const Index> row_weights, int parts) {
  if (parts < 1) throw std::invalid_argument("need at least one part");
  const auto n = static_cast<Index>(row_weights.size());
  Index total = std::accumulate(row_weights.begin(), row_weights.end(), Index{0});
  const bool unweighted = total == 0;
  if (unweighted) total = n;

  std::vector<RowRange> out(parts);
  Index row = 0;
  Index running = 0;
  for (int w = 0; w < parts; ++w) {
    out[w].begin = row;
    if (w == parts - 1) {
      row = n;
    } else {
      // Stop once running * parts >= (w + 1) * total.
      const Index target = (w + 1) * total;
      while (row < n && running * parts < target) {
        running += unweighted ? 1 : row_weights[row];
        ++row;
      }
    }
    out[w].end = row;
  }
  return out;
}

std::vector<Partition> partition_rows(const FlattenedViews& views, int workers) {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  std::vector<Partition> parts(workers);
  for (int w = 0; w < workers; ++w) parts[w].worker_id = w;

  const Dims& d = views.dims();
  for (int mode = 1; mode <= 3; ++mode) {
    const CsrMatrix& xn = views.x(mode);
    std::vector<Index> weights(xn.nrows);
    for (Index r = 0; r < xn.nrows; ++r) weights[r] = xn.rowptr[r + 1] - xn.rowptr[r];
    const auto blocks = greedy_prefix_split(weights, workers);

    // Slot c of the paired compressed transpose feeds output row
    // rowmap[c] / second_dim, and rowmap is sorted.
    const int paired = paired_mode(mode);
    const Index second_dim = d[paired_mode(paired)];
    const auto& rowmap = views.rowmap(paired);
    for (int w = 0; w < workers; ++w) {
      const RowRange r = blocks[w];
      const auto lo = std::lower_bound(rowmap.begin(), rowmap.end(), r.begin * second_dim);
      const auto hi = std::lower_bound(rowmap.begin(), rowmap.end(), r.end * second_dim);
      parts[w].rows[mode - 1] = r;
      parts[w].xt_rows[mode - 1] = {static_cast<Index>(lo - rowmap.begin()), static_cast<Index>(hi - rowmap.begin())};
    }
  }
  return parts;
}

}  // namespace dfacto
