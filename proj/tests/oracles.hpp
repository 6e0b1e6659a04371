#pragma once

// Independent reference implementations used by the tests. Nothing here calls
// into the library's kernels or solvers; only its plain data types.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "dfacto/cp_solver.hpp"
#include "dfacto/joint.hpp"
#include "dfacto/sparse_tensor.hpp"

namespace oracle {

using dfacto::Dims;
using dfacto::Entry;
using dfacto::FactorModel;
using dfacto::Index;
using dfacto::Matrix;
using dfacto::SparseTensor;

struct DenseTensor {
  Index I = 0, J = 0, K = 0;
  std::vector<double> data;

  DenseTensor(Index i, Index j, Index k) : I(i), J(j), K(k), data(static_cast<std::size_t>(i * j * k), 0.0) {}
  double& at(Index i, Index j, Index k) { return data[static_cast<std::size_t>((i * J + j) * K + k)]; }
  double at(Index i, Index j, Index k) const { return data[static_cast<std::size_t>((i * J + j) * K + k)]; }
};

inline DenseTensor densify(const SparseTensor& t) {
  DenseTensor d(t.dims().i, t.dims().j, t.dims().k);
  for (const Entry& e : t.entries()) d.at(e.i, e.j, e.k) += e.value;
  return d;
}

// Mode-n flattening straight from the index formulas.
inline Matrix flatten(const DenseTensor& x, int mode) {
  Matrix m;
  if (mode == 1) m = Matrix::Zero(x.I, x.J * x.K);
  if (mode == 2) m = Matrix::Zero(x.J, x.K * x.I);
  if (mode == 3) m = Matrix::Zero(x.K, x.I * x.J);
  for (Index i = 0; i < x.I; ++i)
    for (Index j = 0; j < x.J; ++j)
      for (Index k = 0; k < x.K; ++k) {
        const double v = x.at(i, j, k);
        if (mode == 1) m(i, j + k * x.J) = v;
        if (mode == 2) m(j, k + i * x.K) = v;
        if (mode == 3) m(k, i + j * x.I) = v;
      }
  return m;
}

// N for `mode` by summing over every cell.
inline Matrix mttkrp(const DenseTensor& x, int mode, const Matrix& A, const Matrix& B, const Matrix& C) {
  const Index R = A.cols();
  const Index rows = mode == 1 ? x.I : (mode == 2 ? x.J : x.K);
  Matrix n = Matrix::Zero(rows, R);
  for (Index i = 0; i < x.I; ++i)
    for (Index j = 0; j < x.J; ++j)
      for (Index k = 0; k < x.K; ++k) {
        const double v = x.at(i, j, k);
        if (v == 0.0) continue;
        for (Index r = 0; r < R; ++r) {
          if (mode == 1) n(i, r) += v * B(j, r) * C(k, r);
          if (mode == 2) n(j, r) += v * A(i, r) * C(k, r);
          if (mode == 3) n(k, r) += v * A(i, r) * B(j, r);
        }
      }
  return n;
}

inline double model_value(const FactorModel& m, Index i, Index j, Index k) {
  double s = 0.0;
  for (Index r = 0; r < m.A.cols(); ++r) s += m.weights(r) * m.A(i, r) * m.B(j, r) * m.C(k, r);
  return s;
}

// 1/2 sum over all cells (x - xhat)^2, weights folded into A.
inline double half_residual(const DenseTensor& x, const FactorModel& m) {
  double s = 0.0;
  for (Index i = 0; i < x.I; ++i)
    for (Index j = 0; j < x.J; ++j)
      for (Index k = 0; k < x.K; ++k) {
        const double d = x.at(i, j, k) - model_value(m, i, j, k);
        s += d * d;
      }
  return 0.5 * s;
}

inline double cp_objective(const DenseTensor& x, const FactorModel& m, double reg) {
  const Matrix wa = m.A * m.weights.asDiagonal();
  return half_residual(x, m) + 0.5 * reg * (wa.squaredNorm() + m.B.squaredNorm() + m.C.squaredNorm());
}

inline double rating_loss(const std::vector<dfacto::RatingRecord>& y, const Matrix& A, const Matrix& B) {
  double s = 0.0;
  for (const auto& r : y) {
    const double d = r.rating - A.row(r.user).dot(B.row(r.item));
    s += 0.5 * d * d;
  }
  return s;
}

inline double joint_objective(const std::vector<dfacto::RatingRecord>& y, const DenseTensor& x,
                              const FactorModel& m, double mu, double reg) {
  return rating_loss(y, m.A, m.B) + mu * half_residual(x, m) +
         0.5 * reg * (m.A.squaredNorm() + m.B.squaredNorm() + m.C.squaredNorm());
}

// Matrix completion alone: ratings plus ridge on A and B.
inline double mc_objective(const std::vector<dfacto::RatingRecord>& y, const Matrix& A, const Matrix& B,
                           double reg) {
  return rating_loss(y, A, B) + 0.5 * reg * (A.squaredNorm() + B.squaredNorm());
}

// One sweep of row-wise ridge ALS for matrix completion: all rows of A, then
// all rows of B. Systems are assembled from the record list and solved with QR.
inline void mc_als_sweep(const std::vector<dfacto::RatingRecord>& y, Matrix& A, Matrix& B, double reg) {
  const Index R = A.cols();
  auto solve_side = [&](Matrix& target, const Matrix& other, bool users) {
    for (Index row = 0; row < target.rows(); ++row) {
      Matrix G = reg * Matrix::Identity(R, R);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(R);
      for (const auto& r : y) {
        if ((users ? r.user : r.item) != row) continue;
        const Eigen::VectorXd o = other.row(users ? r.item : r.user).transpose();
        G += o * o.transpose();
        rhs += r.rating * o;
      }
      target.row(row) = G.colPivHouseholderQr().solve(rhs).transpose();
    }
  };
  solve_side(A, B, true);
  solve_side(B, A, false);
}

// Central finite differences of f over every entry of the three factors.
struct FdGradient {
  Matrix dA, dB, dC;
};

inline FdGradient finite_difference(const std::function<double(const FactorModel&)>& f, const FactorModel& m,
                                    double h = 1e-6) {
  FdGradient g{Matrix::Zero(m.A.rows(), m.A.cols()), Matrix::Zero(m.B.rows(), m.B.cols()),
               Matrix::Zero(m.C.rows(), m.C.cols())};
  for (int mode = 1; mode <= 3; ++mode) {
    Matrix& out = mode == 1 ? g.dA : (mode == 2 ? g.dB : g.dC);
    for (Index r = 0; r < out.rows(); ++r)
      for (Index c = 0; c < out.cols(); ++c) {
        FactorModel p = m, q = m;
        p.factor(mode)(r, c) += h;
        q.factor(mode)(r, c) -= h;
        out(r, c) = (f(p) - f(q)) / (2 * h);
      }
  }
  return g;
}

inline double relative_error(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-12);
  return (got - want).norm() / denom;
}

// Random sparse tensor with distinct triples. Values are small integers
// when `integer_values`, else uniform(-1, 1).
inline SparseTensor random_tensor(std::mt19937_64& rng, Index max_dim, std::size_t max_nnz,
                                  bool integer_values = false) {
  std::uniform_int_distribution<Index> dim(1, max_dim);
  const Dims d{dim(rng), dim(rng), dim(rng)};
  const auto cells = static_cast<std::size_t>(d.i * d.j * d.k);
  std::uniform_int_distribution<std::size_t> count(0, std::min(max_nnz, cells));
  const std::size_t nnz = count(rng);
  std::uniform_int_distribution<Index> ui(0, d.i - 1), uj(0, d.j - 1), uk(0, d.k - 1);
  std::uniform_int_distribution<int> iv(1, 9);
  std::uniform_real_distribution<double> rv(-1.0, 1.0);
  std::set<std::tuple<Index, Index, Index>> seen;
  std::vector<Entry> entries;
  while (entries.size() < nnz) {
    const Index i = ui(rng), j = uj(rng), k = uk(rng);
    if (!seen.emplace(i, j, k).second) continue;
    entries.push_back({i, j, k, integer_values ? static_cast<double>(iv(rng)) : rv(rng)});
  }
  return SparseTensor::from_entries(d, std::move(entries));
}

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

inline FactorModel random_factors(std::mt19937_64& rng, const Dims& d, Index R) {
  FactorModel m{random_matrix(rng, d.i, R), random_matrix(rng, d.j, R), random_matrix(rng, d.k, R),
                Eigen::VectorXd::Ones(R)};
  return m;
}

// The 2x3x3 worked-example tensor (zero-based), with its B and C factors.
inline SparseTensor worked_example() {
  std::vector<Entry> e = {{0, 0, 0, 1}, {0, 2, 0, 6}, {0, 1, 1, 4}, {0, 2, 1, 7}, {0, 0, 2, 2},
                          {1, 0, 1, 3}, {1, 2, 1, 8}, {1, 1, 2, 5}, {1, 2, 2, 9}};
  return SparseTensor::from_entries({2, 3, 3}, std::move(e));
}
inline Matrix worked_B() { return (Matrix(3, 2) << 3, 1, 1, 1, 2, 3).finished(); }
inline Matrix worked_C() { return (Matrix(3, 2) << 1, 2, 2, 1, 1, 3).finished(); }
inline Matrix worked_N() { return (Matrix(2, 2) << 57, 69, 73, 123).finished(); }

// The 3x4x3 flattening example: frontal slices k = 0, 1, 2.
inline SparseTensor flattening_example() {
  const double slices[3][3][4] = {{{1, 1, 4, 2}, {3, 4, 5, 3}, {5, 0, 5, 1}},
                                  {{4, 5, 5, 1}, {1, 1, 1, 4}, {1, 1, 0, 3}},
                                  {{1, 0, 2, 4}, {4, 1, 5, 1}, {5, 2, 4, 1}}};
  std::vector<Entry> e;
  for (Index k = 0; k < 3; ++k)
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 4; ++j)
        if (slices[k][i][j] != 0.0) e.push_back({i, j, k, slices[k][i][j]});
  return SparseTensor::from_entries({3, 4, 3}, std::move(e));
}

inline Matrix printed_x1() {
  return (Matrix(3, 12) << 1, 1, 4, 2, 4, 5, 5, 1, 1, 0, 2, 4,  //
          3, 4, 5, 3, 1, 1, 1, 4, 4, 1, 5, 1,                  //
          5, 0, 5, 1, 1, 1, 0, 3, 5, 2, 4, 1)
      .finished();
}
inline Matrix printed_x2() {
  return (Matrix(4, 9) << 1, 4, 1, 3, 1, 4, 5, 1, 5,  //
          1, 5, 0, 4, 1, 1, 0, 1, 2,                  //
          4, 5, 2, 5, 1, 5, 5, 0, 4,                  //
          2, 1, 4, 3, 4, 1, 1, 3, 1)
      .finished();
}
inline Matrix printed_x3() {
  return (Matrix(3, 12) << 1, 3, 5, 1, 4, 0, 4, 5, 5, 2, 3, 1,  //
          4, 1, 1, 5, 1, 1, 5, 1, 0, 1, 4, 3,                  //
          1, 4, 5, 0, 1, 2, 2, 5, 4, 4, 1, 1)
      .finished();
}

inline Matrix csr_to_dense(const dfacto::CsrMatrix& m) {
  Matrix d = Matrix::Zero(m.nrows, m.ncols);
  for (Index r = 0; r < m.nrows; ++r)
    for (Index t = m.rowptr[r]; t < m.rowptr[r + 1]; ++t) d(r, m.columns[t]) += m.values[t];
  return d;
}

}  // namespace oracle
