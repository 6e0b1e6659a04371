#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dfacto/csr_matrix.hpp"
#include "dfacto/dense_ops.hpp"
#include "dfacto/flatten.hpp"

namespace dfacto {

// Every kernel here computes N = X^n (second ⊙ first) for a target mode n:
//
//   mode 1:  N_A = X1 (C ⊙ B)   first = B, second = C
//   mode 2:  N_B = X2 (A ⊙ C)   first = C, second = A
//   mode 3:  N_C = X3 (B ⊙ A)   first = A, second = B
//
// `first` is the factor that multiplies the compressed transpose, `second`
// the one that multiplies the reshaped result.

/// Multiply-add counter accumulated by the kernels.
struct FlopCounter {
  std::uint64_t multiply_adds = 0;

  void reset() noexcept { multiply_adds = 0; }
  FlopCounter& operator+=(const FlopCounter& o) noexcept {
    multiply_adds += o.multiply_adds;
    return *this;
  }
};

/// The mode whose compressed transpose drives the kernel for `target_mode`
/// (2 for mode 1, 3 for mode 2, 1 for mode 3).
int paired_mode(int target_mode);

/// Selects (first, second) for `target_mode` out of the three factors.
struct FactorPair {
  const Matrix& first;
  const Matrix& second;
};
FactorPair factors_for_mode(int target_mode, const Matrix& A, const Matrix& B, const Matrix& C);

/// Sparsity pattern shared by all calls of one plan. Never modified after
/// construction.
struct PlanPattern {
  int mode = 1;
  Index out_rows = 0;      // rows of N (dimension of the target mode)
  Index first_dim = 0;     // rows of `first`
  Index second_dim = 0;    // rows of `second`
  Index row_offset = 0;    // global index of local output row 0
  CsrMatrix xhat_t;        // compressed transpose restricted to this plan's rows
  std::vector<Index> m_rowptr;   // CSR row pointers of M^r, one row per output row
  std::vector<Index> m_columns;  // CSR column indices of M^r (indices into `second`)
};

/// Precomputed DFacTo pattern for one target mode plus the scratch buffer
/// v = (X̂)^T b_r. The values of M^r are the v buffer itself: slots are sorted
/// by flat index, and the flat index order is the row-major order of M^r.
///
/// Copying a plan shares the pattern and duplicates the scratch buffer, so one
/// copy per thread is enough for concurrent use.
class MttkrpPlan {
 public:
  MttkrpPlan() = default;
  explicit MttkrpPlan(std::shared_ptr<const PlanPattern> pattern);

  int mode() const noexcept { return pattern_->mode; }
  Index out_rows() const noexcept { return pattern_->out_rows; }
  Index row_offset() const noexcept { return pattern_->row_offset; }
  const PlanPattern& pattern() const noexcept { return *pattern_; }
  const CsrMatrix& xhat_t() const noexcept { return pattern_->xhat_t; }
  std::span<const Index> m_rowptr() const noexcept { return pattern_->m_rowptr; }
  std::span<const Index> m_columns() const noexcept { return pattern_->m_columns; }

  std::span<double> v_buffer() noexcept { return v_; }
  std::span<const double> v_buffer() const noexcept { return v_; }

  /// Current M^r as a CSR matrix (values copied from the v buffer).
  CsrMatrix m_matrix() const;

  /// Plan restricted to output rows [begin, end), local row 0 = global row `begin`.
  MttkrpPlan shard(Index begin, Index end) const;

 private:
  std::shared_ptr<const PlanPattern> pattern_;
  std::vector<double> v_;
};

MttkrpPlan build_plan(const FlattenedViews& views, int target_mode);

/// Optional per-column intermediate capture for inspection and golden tests.
using KernelTrace = std::vector<Vector>;

/// DFacTo: for each column r, v <- X̂^T first_r written straight into the
/// values of M^r, then n_r <- M^r second_r. `out` must be out_rows x R and is
/// overwritten; nothing is allocated per call.
void mttkrp_dfacto(MttkrpPlan& plan, const Matrix& first, const Matrix& second, Matrix& out,
                   FlopCounter* counter = nullptr, KernelTrace* trace = nullptr);
Matrix mttkrp_dfacto(MttkrpPlan& plan, const Matrix& first, const Matrix& second,
                     FlopCounter* counter = nullptr, KernelTrace* trace = nullptr);

/// Column-parallel DFacTo on `threads` threads, one plan copy per thread.
/// Columns are statically assigned, so the result equals the serial kernel.
void mttkrp_dfacto_threaded(const MttkrpPlan& plan, const Matrix& first, const Matrix& second,
                            Matrix& out, int threads, FlopCounter* counter = nullptr);

inline constexpr std::size_t kDefaultNaiveCap = std::size_t{1} << 28;

/// Materializes (second ⊙ first) and multiplies. Throws CapacityError when
/// the Khatri-Rao product would hold more than `cap` values.
Matrix mttkrp_naive(const CsrMatrix& xn, const Matrix& first, const Matrix& second,
                    FlopCounter* counter = nullptr, std::size_t cap = kDefaultNaiveCap);

/// Toolbox-style: replicate factor entries into per-nonzero vectors, Hadamard
/// with the values, scatter-add by the target index. Trace holds the
/// per-nonzero products in entry order.
Matrix mttkrp_toolbox(const SparseTensor& t, int target_mode, const Matrix& first,
                      const Matrix& second, FlopCounter* counter = nullptr,
                      KernelTrace* trace = nullptr);

/// GigaTensor-style: N1 = X .* second-broadcast, N2 = bin(X) .* first-broadcast,
/// N3 = N1 .* N2 over the stored pattern of X^n, then row sums. Trace holds the
/// N3 values in CSR order.
Matrix mttkrp_gigatensor(const CsrMatrix& xn, const Matrix& first, const Matrix& second,
                         FlopCounter* counter = nullptr, KernelTrace* trace = nullptr);

/// Flop formulas the counters must match.
std::uint64_t expected_flops_dfacto(const FlattenedViews& views, int target_mode, Index rank);
std::uint64_t expected_flops_naive(const FlattenedViews& views, int target_mode, Index rank);
std::uint64_t expected_flops_baseline(std::size_t nnz, Index rank);

}  // namespace dfacto
