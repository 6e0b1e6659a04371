#include "dfacto/mttkrp.hpp"

#include <stdexcept>
#include <string>
#include <thread>

#include "dfacto/errors.hpp"

namespace dfacto {

namespace {

void check_mode(int mode) {
  if (mode < 1 || mode > 3) throw std::invalid_argument("mode must be 1, 2 or 3");
}

void check_factors(Index first_dim, Index second_dim, const Matrix& first, const Matrix& second) {
  if (first.rows() != first_dim || second.rows() != second_dim || first.cols() != second.cols()) {
    throw std::invalid_argument("mttkrp: factor shapes (" + std::to_string(first.rows()) + "x" +
                                std::to_string(first.cols()) + ", " + std::to_string(second.rows()) +
                                "x" + std::to_string(second.cols()) + ") do not match expected rows (" +
                                std::to_string(first_dim) + ", " + std::to_string(second_dim) + ")");
  }
}

// Target index, first-factor index and second-factor index of a COO entry.
struct EntryRoles {
  Index out, first, second;
};

EntryRoles roles(const Entry& e, int mode) {
  switch (mode) {
    case 1: return {e.i, e.j, e.k};
    case 2: return {e.j, e.k, e.i};
    default: return {e.k, e.i, e.j};
  }
}

// The r-th column for DFacTo on one plan; shared by serial and threaded paths.
void dfacto_column(const PlanPattern& p, double* v, const Matrix& first, const Matrix& second,
                   Eigen::Index r, Matrix& out) {
  const CsrMatrix& xt = p.xhat_t;
  const Index* rp = xt.rowptr.data();
  const Index* cols = xt.columns.data();
  const double* vals = xt.values.data();
  const double* b = first.col(r).data();
  for (Index s = 0; s < xt.nrows; ++s) {
    double acc = 0.0;
    for (Index t = rp[s]; t < rp[s + 1]; ++t) acc += vals[t] * b[cols[t]];
    v[s] = acc;
  }

  const Index* mrp = p.m_rowptr.data();
  const Index* mcols = p.m_columns.data();
  const double* c = second.col(r).data();
  double* n = out.col(r).data();
  for (Index i = 0; i < p.out_rows; ++i) {
    double acc = 0.0;
    for (Index t = mrp[i]; t < mrp[i + 1]; ++t) acc += v[t] * c[mcols[t]];
    n[i] = acc;
  }
}

}  // namespace

int paired_mode(int target_mode) {
  check_mode(target_mode);
  return target_mode % 3 + 1;
}

FactorPair factors_for_mode(int target_mode, const Matrix& A, const Matrix& B, const Matrix& C) {
  switch (target_mode) {
    case 1: return {B, C};
    case 2: return {C, A};
    case 3: return {A, B};
    default: throw std::invalid_argument("mode must be 1, 2 or 3");
  }
}

MttkrpPlan::MttkrpPlan(std::shared_ptr<const PlanPattern> pattern)
    : pattern_(std::move(pattern)), v_(pattern_->xhat_t.nrows, 0.0) {}

CsrMatrix MttkrpPlan::m_matrix() const {
  CsrMatrix m;
  m.nrows = pattern_->out_rows;
  m.ncols = pattern_->second_dim;
  m.rowptr = pattern_->m_rowptr;
  m.columns = pattern_->m_columns;
  m.values = v_;
  return m;
}

MttkrpPlan MttkrpPlan::shard(Index begin, Index end) const {
  const PlanPattern& p = *pattern_;
  if (begin < 0 || end < begin || end > p.out_rows) throw std::out_of_range("plan shard: bad row range");
  auto out = std::make_shared<PlanPattern>();
  out->mode = p.mode;
  out->out_rows = end - begin;
  out->first_dim = p.first_dim;
  out->second_dim = p.second_dim;
  out->row_offset = p.row_offset + begin;

  const Index s_begin = p.m_rowptr[begin];
  const Index s_end = p.m_rowptr[end];
  CsrMatrix& xt = out->xhat_t;
  xt.nrows = s_end - s_begin;
  xt.ncols = p.xhat_t.ncols;
  const Index t_begin = p.xhat_t.rowptr[s_begin];
  const Index t_end = p.xhat_t.rowptr[s_end];
  xt.rowptr.resize(xt.nrows + 1);
  for (Index s = 0; s <= xt.nrows; ++s) xt.rowptr[s] = p.xhat_t.rowptr[s_begin + s] - t_begin;
  xt.columns.assign(p.xhat_t.columns.begin() + t_begin, p.xhat_t.columns.begin() + t_end);
  xt.values.assign(p.xhat_t.values.begin() + t_begin, p.xhat_t.values.begin() + t_end);

  out->m_rowptr.resize(out->out_rows + 1);
  for (Index i = 0; i <= out->out_rows; ++i) out->m_rowptr[i] = p.m_rowptr[begin + i] - s_begin;
  out->m_columns.assign(p.m_columns.begin() + s_begin, p.m_columns.begin() + s_end);
  return MttkrpPlan(std::move(out));
}

MttkrpPlan build_plan(const FlattenedViews& views, int target_mode) {
  const int paired = paired_mode(target_mode);
  const Dims& d = views.dims();
  auto p = std::make_shared<PlanPattern>();
  p->mode = target_mode;
  p->out_rows = d[target_mode];
  p->first_dim = d[paired];
  p->second_dim = d[paired % 3 + 1];
  p->xhat_t = views.xt(paired);

  // Slot s sits at flat index rowmap[s] = col + row * second_dim of M^r.
  const auto& rowmap = views.rowmap(paired);
  p->m_rowptr.assign(p->out_rows + 1, 0);
  p->m_columns.resize(rowmap.size());
  for (std::size_t s = 0; s < rowmap.size(); ++s) {
    const Index row = rowmap[s] / p->second_dim;
    p->m_columns[s] = rowmap[s] % p->second_dim;
    ++p->m_rowptr[row + 1];
  }
  for (Index i = 0; i < p->out_rows; ++i) p->m_rowptr[i + 1] += p->m_rowptr[i];
  return MttkrpPlan(std::move(p));
}

void mttkrp_dfacto(MttkrpPlan& plan, const Matrix& first, const Matrix& second, Matrix& out,
                   FlopCounter* counter, KernelTrace* trace) {
  const PlanPattern& p = plan.pattern();
  check_factors(p.first_dim, p.second_dim, first, second);
  const Eigen::Index R = first.cols();
  if (out.rows() != p.out_rows || out.cols() != R) {
    throw std::invalid_argument("mttkrp_dfacto: output must be out_rows x R");
  }
  double* v = plan.v_buffer().data();
  for (Eigen::Index r = 0; r < R; ++r) {
    dfacto_column(p, v, first, second, r, out);
    if (trace) trace->push_back(Eigen::Map<const Vector>(v, p.xhat_t.nrows));
  }
  if (counter) {
    counter->multiply_adds +=
        static_cast<std::uint64_t>(p.xhat_t.nnz() + p.m_columns.size()) * static_cast<std::uint64_t>(R);
  }
}

Matrix mttkrp_dfacto(MttkrpPlan& plan, const Matrix& first, const Matrix& second, FlopCounter* counter,
                     KernelTrace* trace) {
  Matrix out(plan.out_rows(), first.cols());
  mttkrp_dfacto(plan, first, second, out, counter, trace);
  return out;
}

void mttkrp_dfacto_threaded(const MttkrpPlan& plan, const Matrix& first, const Matrix& second,
                            Matrix& out, int threads, FlopCounter* counter) {
  const PlanPattern& p = plan.pattern();
  check_factors(p.first_dim, p.second_dim, first, second);
  const Eigen::Index R = first.cols();
  if (out.rows() != p.out_rows || out.cols() != R) {
    throw std::invalid_argument("mttkrp_dfacto_threaded: output must be out_rows x R");
  }
  const int T = std::max(1, std::min<int>(threads, static_cast<int>(R)));
  std::vector<std::thread> pool;
  pool.reserve(T);
  for (int t = 0; t < T; ++t) {
    pool.emplace_back([&, t] {
      std::vector<double> v(p.xhat_t.nrows);
      for (Eigen::Index r = t; r < R; r += T) dfacto_column(p, v.data(), first, second, r, out);
    });
  }
  for (auto& th : pool) th.join();
  if (counter) {
    counter->multiply_adds +=
        static_cast<std::uint64_t>(p.xhat_t.nnz() + p.m_columns.size()) * static_cast<std::uint64_t>(R);
  }
}

Matrix mttkrp_naive(const CsrMatrix& xn, const Matrix& first, const Matrix& second, FlopCounter* counter,
                    std::size_t cap) {
  if (first.cols() != second.cols()) throw std::invalid_argument("mttkrp_naive: column counts differ");
  if (xn.ncols != first.rows() * second.rows()) {
    throw std::invalid_argument("mttkrp_naive: flattening width does not match factor rows");
  }
  const auto kr_values = static_cast<std::size_t>(xn.ncols) * static_cast<std::size_t>(first.cols());
  if (kr_values > cap) {
    throw CapacityError("mttkrp_naive: Khatri-Rao product needs " + std::to_string(kr_values) +
                        " values, cap is " + std::to_string(cap));
  }
  const Matrix kr = khatri_rao(second, first);
  const Eigen::Index R = first.cols();
  Matrix out = Matrix::Zero(xn.nrows, R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const double* col = kr.col(r).data();
    for (Index i = 0; i < xn.nrows; ++i) {
      double acc = 0.0;
      for (Index t = xn.rowptr[i]; t < xn.rowptr[i + 1]; ++t) acc += xn.values[t] * col[xn.columns[t]];
      out(i, r) = acc;
    }
  }
  if (counter) {
    counter->multiply_adds += (static_cast<std::uint64_t>(xn.ncols) + xn.nnz()) * static_cast<std::uint64_t>(R);
  }
  return out;
}

Matrix mttkrp_toolbox(const SparseTensor& t, int target_mode, const Matrix& first, const Matrix& second,
                      FlopCounter* counter, KernelTrace* trace) {
  check_mode(target_mode);
  const int paired = paired_mode(target_mode);
  const Dims& d = t.dims();
  check_factors(d[paired], d[paired % 3 + 1], first, second);
  const Eigen::Index R = first.cols();
  const auto entries = t.entries();
  const std::size_t nnz = entries.size();

  // Index columns of the coordinate matrix, split by role.
  std::vector<Index> out_idx(nnz), first_idx(nnz), second_idx(nnz);
  std::vector<double> vals(nnz);
  for (std::size_t e = 0; e < nnz; ++e) {
    const auto ro = roles(entries[e], target_mode);
    out_idx[e] = ro.out;
    first_idx[e] = ro.first;
    second_idx[e] = ro.second;
    vals[e] = entries[e].value;
  }

  Matrix out = Matrix::Zero(d[target_mode], R);
  std::vector<double> rep_first(nnz), rep_second(nnz);
  for (Eigen::Index r = 0; r < R; ++r) {
    for (std::size_t e = 0; e < nnz; ++e) rep_first[e] = first(first_idx[e], r);
    for (std::size_t e = 0; e < nnz; ++e) rep_second[e] = second(second_idx[e], r);
    for (std::size_t e = 0; e < nnz; ++e) rep_first[e] = vals[e] * rep_first[e] * rep_second[e];
    for (std::size_t e = 0; e < nnz; ++e) out(out_idx[e], r) += rep_first[e];
    if (trace) trace->push_back(Eigen::Map<const Vector>(rep_first.data(), static_cast<Eigen::Index>(nnz)));
  }
  if (counter) counter->multiply_adds += expected_flops_baseline(nnz, R);
  return out;
}

Matrix mttkrp_gigatensor(const CsrMatrix& xn, const Matrix& first, const Matrix& second,
                         FlopCounter* counter, KernelTrace* trace) {
  if (first.cols() != second.cols()) throw std::invalid_argument("mttkrp_gigatensor: column counts differ");
  if (xn.ncols != first.rows() * second.rows()) {
    throw std::invalid_argument("mttkrp_gigatensor: flattening width does not match factor rows");
  }
  const Eigen::Index R = first.cols();
  const Index fdim = first.rows();
  const std::size_t nnz = xn.nnz();
  Matrix out(xn.nrows, R);
  std::vector<double> n1(nnz), n2(nnz);
  for (Eigen::Index r = 0; r < R; ++r) {
    const double* f = first.col(r).data();
    const double* s = second.col(r).data();
    // N1 = X .* (1 ⊙ (s ⊗ 1)^T): column c carries second[c / fdim].
    for (std::size_t t = 0; t < nnz; ++t) n1[t] = xn.values[t] * s[xn.columns[t] / fdim];
    // N2 = bin(X) .* (1 ⊙ (1 ⊗ f)^T): column c carries first[c % fdim].
    for (std::size_t t = 0; t < nnz; ++t) n2[t] = (xn.values[t] != 0.0 ? 1.0 : 0.0) * f[xn.columns[t] % fdim];
    for (std::size_t t = 0; t < nnz; ++t) n1[t] *= n2[t];
    for (Index i = 0; i < xn.nrows; ++i) {
      double acc = 0.0;
      for (Index t = xn.rowptr[i]; t < xn.rowptr[i + 1]; ++t) acc += n1[t];
      out(i, r) = acc;
    }
    if (trace) trace->push_back(Eigen::Map<const Vector>(n1.data(), static_cast<Eigen::Index>(nnz)));
  }
  if (counter) counter->multiply_adds += expected_flops_baseline(nnz, R);
  return out;
}

std::uint64_t expected_flops_dfacto(const FlattenedViews& views, int target_mode, Index rank) {
  const int paired = paired_mode(target_mode);
  return (static_cast<std::uint64_t>(nnzc(views.x(paired))) + views.nnz()) * static_cast<std::uint64_t>(rank);
}

std::uint64_t expected_flops_naive(const FlattenedViews& views, int target_mode, Index rank) {
  check_mode(target_mode);
  return (static_cast<std::uint64_t>(views.x(target_mode).ncols) + views.nnz()) *
         static_cast<std::uint64_t>(rank);
}

std::uint64_t expected_flops_baseline(std::size_t nnz, Index rank) {
  return 5 * static_cast<std::uint64_t>(nnz) * static_cast<std::uint64_t>(rank);
}

}  // namespace dfacto
