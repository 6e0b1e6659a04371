#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dfacto {

using Index = std::int64_t;

/// Dimensions (I, J, K) of a third-order tensor.
struct Dims {
  Index i = 0;
  Index j = 0;
  Index k = 0;

  Index operator[](int mode) const { return mode == 1 ? i : (mode == 2 ? j : k); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Entry {
  Index i = 0;
  Index j = 0;
  Index k = 0;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Canonical third-order sparse tensor in coordinate form.
///
/// Entries are strictly sorted by (i, j, k) with no repeated index triple and
/// every index inside `dims`. Explicit zeros are allowed; they are part of the
/// observed set.
class SparseTensor {
 public:
  SparseTensor() = default;

  /// Sorts, sums duplicates and validates bounds. Throws RangeError when an
  /// entry lies outside `dims`.
  static SparseTensor from_entries(Dims dims, std::vector<Entry> entries,
                                   std::size_t* merged_duplicates = nullptr);

  const Dims& dims() const noexcept { return dims_; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Squared Frobenius norm over the stored entries.
  double norm_squared() const;

 private:
  Dims dims_;
  std::vector<Entry> entries_;
};

struct ParseResult {
  SparseTensor tensor;
  std::size_t merged_duplicates = 0;
  bool dims_from_header = false;
};

/// Reads "i j k value" lines. Lines starting with '#' are comments; a line
/// "%dims I J K" fixes the dimensions instead of inferring them from the
/// largest index seen.
ParseResult parse_tensor(std::istream& in, int index_base = 1);
ParseResult read_tensor_file(const std::string& path, int index_base = 1);

/// Canonical writer: a "%dims" header, then one sorted entry per line with
/// values printed in shortest round-trip form.
void write_tensor(std::ostream& out, const SparseTensor& t, int index_base = 1);
void write_tensor_file(const std::string& path, const SparseTensor& t, int index_base = 1);

}  // namespace dfacto
