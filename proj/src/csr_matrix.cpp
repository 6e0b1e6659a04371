#include "dfacto/csr_matrix.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dfacto {

double CsrMatrix::at(Index r, Index c) const {
  const auto cols = row_columns(r);
  const auto it = std::lower_bound(cols.begin(), cols.end(), c);
  if (it == cols.end() || *it != c) return 0.0;
  return values[rowptr[r] + (it - cols.begin())];
}

void CsrMatrix::validate() const {
  if (nrows < 0 || ncols < 0) throw std::logic_error("csr: negative shape");
  if (rowptr.size() != static_cast<std::size_t>(nrows) + 1) throw std::logic_error("csr: rowptr length");
  if (rowptr.front() != 0) throw std::logic_error("csr: rowptr[0] != 0");
  if (rowptr.back() != static_cast<Index>(values.size())) throw std::logic_error("csr: rowptr[n] != nnz");
  if (columns.size() != values.size()) throw std::logic_error("csr: columns/values length mismatch");
  for (Index r = 0; r < nrows; ++r) {
    if (rowptr[r] > rowptr[r + 1]) throw std::logic_error("csr: rowptr decreasing at row " + std::to_string(r));
    for (Index t = rowptr[r]; t < rowptr[r + 1]; ++t) {
      if (columns[t] < 0 || columns[t] >= ncols) throw std::logic_error("csr: column out of range");
      if (t > rowptr[r] && columns[t - 1] >= columns[t]) {
        throw std::logic_error("csr: columns not strictly increasing in row " + std::to_string(r));
      }
    }
  }
}

CsrMatrix csr_from_triplets(Index nrows, Index ncols, std::span<const Triplet> triplets) {
  CsrMatrix m;
  m.nrows = nrows;
  m.ncols = ncols;
  m.rowptr.assign(nrows + 1, 0);
  for (const auto& t : triplets) {
    if (t.row < 0 || t.row >= nrows || t.col < 0 || t.col >= ncols) {
      throw std::out_of_range("csr_from_triplets: index out of range");
    }
    ++m.rowptr[t.row + 1];
  }
  for (Index r = 0; r < nrows; ++r) m.rowptr[r + 1] += m.rowptr[r];

  m.columns.resize(triplets.size());
  m.values.resize(triplets.size());
  std::vector<Index> fill(m.rowptr.begin(), m.rowptr.end() - 1);
  for (const auto& t : triplets) {
    const Index pos = fill[t.row]++;
    m.columns[pos] = t.col;
    m.values[pos] = t.value;
  }

  // Rows are usually already ordered; sort only the ones that are not.
  std::vector<std::pair<Index, double>> scratch;
  for (Index r = 0; r < nrows; ++r) {
    const Index b = m.rowptr[r], e = m.rowptr[r + 1];
    if (std::is_sorted(m.columns.begin() + b, m.columns.begin() + e)) continue;
    scratch.clear();
    for (Index t = b; t < e; ++t) scratch.emplace_back(m.columns[t], m.values[t]);
    std::sort(scratch.begin(), scratch.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (Index t = b; t < e; ++t) {
      m.columns[t] = scratch[t - b].first;
      m.values[t] = scratch[t - b].second;
    }
  }
  for (Index r = 0; r < nrows; ++r) {
    for (Index t = m.rowptr[r] + 1; t < m.rowptr[r + 1]; ++t) {
      if (m.columns[t - 1] == m.columns[t]) throw std::invalid_argument("csr_from_triplets: duplicate entry");
    }
  }
  return m;
}

Index nnzc(const CsrMatrix& m) {
  std::vector<char> seen(m.ncols, 0);
  Index count = 0;
  for (std::size_t t = 0; t < m.values.size(); ++t) {
    if (m.values[t] != 0.0 && !seen[m.columns[t]]) {
      seen[m.columns[t]] = 1;
      ++count;
    }
  }
  return count;
}

Index nnzr(const CsrMatrix& m) {
  Index count = 0;
  for (Index r = 0; r < m.nrows; ++r) {
    for (double v : m.row_values(r)) {
      if (v != 0.0) {
        ++count;
        break;
      }
    }
  }
  return count;
}

CsrMatrix transpose(const CsrMatrix& m) {
  CsrMatrix t;
  t.nrows = m.ncols;
  t.ncols = m.nrows;
  t.rowptr.assign(m.ncols + 1, 0);
  for (Index c : m.columns) ++t.rowptr[c + 1];
  for (Index r = 0; r < t.nrows; ++r) t.rowptr[r + 1] += t.rowptr[r];
  t.columns.resize(m.nnz());
  t.values.resize(m.nnz());
  std::vector<Index> fill(t.rowptr.begin(), t.rowptr.end() - 1);
  // Walking m row by row keeps each output row's columns increasing.
  for (Index r = 0; r < m.nrows; ++r) {
    for (Index s = m.rowptr[r]; s < m.rowptr[r + 1]; ++s) {
      const Index pos = fill[m.columns[s]]++;
      t.columns[pos] = r;
      t.values[pos] = m.values[s];
    }
  }
  return t;
}

CsrMatrix compressed_transpose(const CsrMatrix& m, std::vector<Index>& rowmap) {
  const CsrMatrix full = transpose(m);
  rowmap.clear();
  CsrMatrix out;
  out.ncols = full.ncols;
  out.rowptr.assign(1, 0);
  out.columns.reserve(full.nnz());
  out.values.reserve(full.nnz());
  for (Index r = 0; r < full.nrows; ++r) {
    const auto vals = full.row_values(r);
    if (std::none_of(vals.begin(), vals.end(), [](double v) { return v != 0.0; })) continue;
    const auto cols = full.row_columns(r);
    out.columns.insert(out.columns.end(), cols.begin(), cols.end());
    out.values.insert(out.values.end(), vals.begin(), vals.end());
    out.rowptr.push_back(static_cast<Index>(out.values.size()));
    rowmap.push_back(r);
  }
  out.nrows = static_cast<Index>(rowmap.size());
  return out;
}

void spmv(const CsrMatrix& m, std::span<const double> x, std::span<double> y) {
  if (static_cast<Index>(x.size()) != m.ncols || static_cast<Index>(y.size()) != m.nrows) {
    throw std::invalid_argument("spmv: shape mismatch");
  }
  const Index* rp = m.rowptr.data();
  const Index* cols = m.columns.data();
  const double* vals = m.values.data();
  for (Index r = 0; r < m.nrows; ++r) {
    double acc = 0.0;
    for (Index t = rp[r]; t < rp[r + 1]; ++t) acc += vals[t] * x[cols[t]];
    y[r] = acc;
  }
}

}  // namespace dfacto
