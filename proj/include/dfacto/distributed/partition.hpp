#pragma once

#include <array>
#include <span>
#include <vector>

#include "dfacto/flatten.hpp"

namespace dfacto {

struct RowRange {
  Index begin = 0;
  Index end = 0;

  Index size() const noexcept { return end - begin; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

/// What one worker owns. For target mode n (index n-1):
///   rows[n-1]    output rows of N it computes
///   xt_rows[n-1] the matching row block of the compressed transpose of the
///                paired flattening; its rowmap slice is
///                views.rowmap(paired_mode(n))[xt_rows.begin, xt_rows.end)
struct Partition {
  int worker_id = 0;
  std::array<RowRange, 3> rows;
  std::array<RowRange, 3> xt_rows;
};

/// Greedy prefix split of `row_weights` into `parts` contiguous blocks:
/// block w ends at the first row where the running total reaches
/// (w+1)/parts of the sum. Blocks may be empty. With an all-zero weight
/// vector every row counts as one.
std::vector<RowRange> greedy_prefix_split(std::span<const Index> row_weights, int parts);

/// Per-mode balanced row blocks, weighted by stored entries per output row.
/// Throws std::invalid_argument when workers < 1.
std::vector<Partition> partition_rows(const FlattenedViews& views, int workers);

}  // namespace dfacto
