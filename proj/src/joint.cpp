#include "dfacto/joint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "dfacto/errors.hpp"
#include "text_fields.hpp"

namespace dfacto {

namespace {

constexpr double kRelChangeGuard = 1e-300;

void require_matching_dims(const RatingsMatrix& Y, const Engine& engine) {
  const Dims& d = engine.dims();
  if (Y.users() != d.i || Y.items() != d.j) {
    throw std::invalid_argument("ratings matrix is " + std::to_string(Y.users()) + "x" + std::to_string(Y.items()) +
                                " but the review tensor is " + std::to_string(d.i) + "x" + std::to_string(d.j) +
                                "xK");
  }
}

double rating_loss(const RatingsMatrix& Y, const FactorModel& m) {
  const CsrMatrix& y = Y.by_row();
  double s = 0.0;
  for (Index i = 0; i < y.nrows; ++i) {
    for (Index t = y.rowptr[i]; t < y.rowptr[i + 1]; ++t) {
      const double e = y.values[t] - m.A.row(i).dot(m.B.row(y.columns[t]));
      s += e * e;
    }
  }
  return 0.5 * s;
}

double clamp_prediction(double v, const RatingClamp& c) { return c.enabled ? std::clamp(v, c.lo, c.hi) : v; }

}  // namespace

RatingsMatrix RatingsMatrix::from_records(Index users, Index items, const std::vector<RatingRecord>& records) {
  if (users < 0 || items < 0) throw std::invalid_argument("ratings matrix shape must be non-negative");
  std::vector<Triplet> triplets;
  triplets.reserve(records.size());
  for (const auto& r : records) {
    if (r.user < 0 || r.user >= users || r.item < 0 || r.item >= items) {
      throw RangeError("rating (" + std::to_string(r.user) + "," + std::to_string(r.item) + ") outside " +
                       std::to_string(users) + "x" + std::to_string(items));
    }
    if (!std::isfinite(r.rating)) throw std::invalid_argument("rating is not finite");
    triplets.push_back({r.user, r.item, r.rating});
  }
  RatingsMatrix out;
  try {
    out.by_row_ = csr_from_triplets(users, items, triplets);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("ratings contain a duplicate (user, item) pair");
  }
  out.by_col_ = transpose(out.by_row_);
  return out;
}

std::vector<RatingRecord> parse_ratings(std::istream& in, int index_base) {
  if (index_base != 0 && index_base != 1) throw std::invalid_argument("index base must be 0 or 1");
  std::vector<RatingRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::string_view fields[4];
  while (std::getline(in, line)) {
    ++line_no;
    const auto s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto n = text::split_fields(s, fields, 4);
    if (n != 3 && n != 4) throw ParseError(line_no, "expected 'user item rating [has_review]'");
    RatingRecord r;
    if (!text::parse_number(fields[0], r.user) || !text::parse_number(fields[1], r.item)) {
      throw ParseError(line_no, "index is not an integer");
    }
    r.user -= index_base;
    r.item -= index_base;
    if (r.user < 0 || r.item < 0) {
      throw RangeError("line " + std::to_string(line_no) + ": negative index after base adjustment");
    }
    if (!text::parse_number(fields[2], r.rating)) throw ParseError(line_no, "rating is not a number");
    if (n == 4) {
      int flag = 0;
      if (!text::parse_number(fields[3], flag) || (flag != 0 && flag != 1)) {
        throw ParseError(line_no, "has_review must be 0 or 1");
      }
      r.has_review = flag == 1;
    }
    out.push_back(r);
  }
  if (out.empty()) throw EmptyInputError("ratings input has no entries");
  return out;
}

std::vector<RatingRecord> read_ratings_file(const std::string& path, int index_base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);
  return parse_ratings(in, index_base);
}

void rescale_ratings(std::vector<RatingRecord>& records, double lo, double hi) {
  if (records.empty()) return;
  const auto [mn, mx] = std::minmax_element(records.begin(), records.end(),
                                            [](const auto& a, const auto& b) { return a.rating < b.rating; });
  const double rmin = mn->rating, rmax = mx->rating;
  for (auto& r : records) r.rating = rmax > rmin ? lo + (r.rating - rmin) / (rmax - rmin) * (hi - lo) : hi;
}

RatingSplit split_ratings(std::vector<RatingRecord> records, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(records.begin(), records.end(), rng);
  const std::size_t n = records.size();
  const std::size_t n_train = (6 * n + 5) / 10;
  const std::size_t n_val = std::min((2 * n + 5) / 10, n - n_train);

  RatingSplit out;
  out.train.assign(records.begin(), records.begin() + n_train);
  if (out.train.empty()) throw EmptyInputError("training split is empty");

  std::unordered_set<Index> users, items;
  for (const auto& r : out.train) {
    users.insert(r.user);
    items.insert(r.item);
  }
  auto known = [&](const RatingRecord& r) { return users.count(r.user) && items.count(r.item); };
  for (std::size_t t = n_train; t < n; ++t) {
    if (!known(records[t])) continue;
    (t < n_train + n_val ? out.validation : out.test).push_back(records[t]);
  }
  return out;
}

void JointConfig::validate() const {
  SolverConfig sc;
  sc.rank = rank;
  sc.reg = reg;
  sc.max_iters = max_iters;
  sc.tol = tol;
  sc.line_search = line_search;
  sc.validate();
  if (!(mu >= 0.0)) throw std::invalid_argument("mu must be >= 0");
  if (clamp.enabled && !(clamp.lo <= clamp.hi)) throw std::invalid_argument("clamp range is empty");
}

double joint_objective(const RatingsMatrix& Y, Engine& engine, const FactorModel& m, double mu, double reg) {
  require_matching_dims(Y, engine);
  double f = rating_loss(Y, m);
  if (mu != 0.0) {
    f += mu * assemble_objective(engine.norm_x_squared(), engine.inner_product(m), m, 0.0).objective;
  }
  if (reg != 0.0) f += 0.5 * reg * (m.A.squaredNorm() + m.B.squaredNorm() + m.C.squaredNorm());
  return f;
}

Gradients joint_gradient(const RatingsMatrix& Y, Engine& engine, const FactorModel& m, double mu, double reg,
                         FlopCounter* flops) {
  require_matching_dims(Y, engine);
  Gradients g;
  g.dA = reg * m.A;
  g.dB = reg * m.B;
  g.dC = reg * m.C;

  // Rating part, row i of A: sum over rated items j of (a_i b_j^T - y_ij) b_j.
  const CsrMatrix& y = Y.by_row();
  for (Index i = 0; i < y.nrows; ++i) {
    for (Index t = y.rowptr[i]; t < y.rowptr[i + 1]; ++t) {
      const Index j = y.columns[t];
      const double e = m.A.row(i).dot(m.B.row(j)) - y.values[t];
      g.dA.row(i) += e * m.B.row(j);
      g.dB.row(j) += e * m.A.row(i);
    }
  }

  if (mu != 0.0) {
    FlopCounter local;
    FlopCounter& fc = flops ? *flops : local;
    g.dA += mu * (m.A * mode_gram(1, m, 0.0) - engine.mttkrp(1, m, fc));
    g.dB += mu * (m.B * mode_gram(2, m, 0.0) - engine.mttkrp(2, m, fc));
    g.dC += mu * (m.C * mode_gram(3, m, 0.0) - engine.mttkrp(3, m, fc));
  }
  return g;
}

bool joint_als_update(const RatingsMatrix& Y, Engine& engine, FactorModel& m, double mu, double reg,
                      FlopCounter* flops) {
  require_matching_dims(Y, engine);
  FlopCounter local;
  FlopCounter& fc = flops ? *flops : local;
  const Index R = m.rank();
  bool pseudo = false;

  // Rows of `F` (A or B) against the ratings in `y` (rows of y index rows of F).
  auto update_rows = [&](Matrix& F, const Matrix& other, const CsrMatrix& y, int mode) {
    Matrix base = Matrix::Identity(R, R) * reg;
    Matrix N;
    if (mu != 0.0) {
      base += mu * mode_gram(mode, m, 0.0);
      N = engine.mttkrp(mode, m, fc);
    }
    Matrix G(R, R);
    Matrix rhs(1, R);
    for (Index r = 0; r < y.nrows; ++r) {
      G = base;
      if (mu != 0.0) {
        rhs = mu * N.row(r);
      } else {
        rhs.setZero();
      }
      for (Index t = y.rowptr[r]; t < y.rowptr[r + 1]; ++t) {
        const auto o = other.row(y.columns[t]);
        G.noalias() += o.transpose() * o;
        rhs.noalias() += y.values[t] * o;
      }
      GramSolve sol = solve_gram(rhs, G);
      pseudo = pseudo || sol.used_pseudo_inverse;
      F.row(r) = sol.x.row(0);
    }
    engine.factor_updated(mode, m);
  };

  update_rows(m.A, m.B, Y.by_row(), 1);
  update_rows(m.B, m.A, Y.by_column(), 2);

  // C has no rating term: minimize mu/2 ||X - X̂||^2 + reg/2 ||C||^2.
  Matrix G = mu * mode_gram(3, m, 0.0);
  G.diagonal().array() += reg;
  Matrix rhs = mu != 0.0 ? Matrix(mu * engine.mttkrp(3, m, fc)) : Matrix::Zero(m.C.rows(), R);
  GramSolve sol = solve_gram(rhs, G);
  pseudo = pseudo || sol.used_pseudo_inverse;
  m.C = std::move(sol.x);
  engine.factor_updated(3, m);
  return pseudo;
}

JointSolveResult joint_solve(const RatingsMatrix& Y, Engine& engine, const JointConfig& config) {
  config.validate();
  require_matching_dims(Y, engine);
  JointSolveResult res;
  res.model = random_model(engine.dims(), config.rank, config.seed);

  auto train_mse = [&](const FactorModel& m) { return Y.empty() ? 0.0 : mse(Y, m); };

  engine.begin_iteration(0, res.model);
  double f_prev = joint_objective(Y, engine, res.model, config.mu, config.reg);
  if (!std::isfinite(f_prev)) throw NumericalError("initial joint objective is not finite");
  res.initial_objective = f_prev;

  for (int it = 1; it <= config.max_iters; ++it) {
    JointIterationStats st;
    st.iteration = it;
    FlopCounter flops;
    engine.begin_iteration(it, res.model);
    if (config.algorithm == Algorithm::Als) {
      st.pseudo_inverse = joint_als_update(Y, engine, res.model, config.mu, config.reg, &flops);
      st.objective = joint_objective(Y, engine, res.model, config.mu, config.reg);
    } else {
      const Gradients g = joint_gradient(Y, engine, res.model, config.mu, config.reg, &flops);
      auto objective_at = [&](double alpha) {
        return joint_objective(Y, engine, step_model(res.model, g, alpha), config.mu, config.reg);
      };
      const LineSearchResult ls = backtracking_line_search(objective_at, f_prev, g.squared_norm(), config.line_search);
      if (!ls.stalled) res.model = step_model(res.model, g, ls.alpha);
      st.objective = ls.objective;
      st.step = ls.alpha;
      st.backtracks = ls.backtracks;
      st.stalled = ls.stalled;
    }
    if (!std::isfinite(st.objective) || !res.model.all_finite()) {
      throw NumericalError("joint objective became non-finite at iteration " + std::to_string(it));
    }
    st.train_mse = train_mse(res.model);
    st.flops = flops.multiply_adds;
    res.history.push_back(st);
    const double rel = std::abs(f_prev - st.objective) / std::max(f_prev, kRelChangeGuard);
    f_prev = st.objective;
    if (rel < config.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

double mse(const RatingsMatrix& test, const FactorModel& m, const RatingClamp& clamp) {
  if (test.empty()) throw EmptyInputError("mse: no ratings to evaluate");
  if (test.users() > m.A.rows() || test.items() > m.B.rows()) {
    throw std::invalid_argument("mse: ratings matrix larger than the model");
  }
  const CsrMatrix& y = test.by_row();
  double s = 0.0;
  for (Index i = 0; i < y.nrows; ++i) {
    for (Index t = y.rowptr[i]; t < y.rowptr[i + 1]; ++t) {
      const double pred = clamp_prediction(m.A.row(i).dot(m.B.row(y.columns[t])), clamp);
      const double e = y.values[t] - pred;
      s += e * e;
    }
  }
  return s / static_cast<double>(test.size());
}

std::vector<double> default_mu_grid() {
  std::vector<double> g;
  for (int e = 2; e >= -10; --e) g.push_back(std::pow(10.0, e));
  return g;
}

std::vector<double> default_lambda_grid() { return {100.0, 10.0, 1.0, 0.1, 0.01}; }

GridSearchResult joint_grid_search(const RatingsMatrix& train, const RatingsMatrix& validation,
                                   const RatingsMatrix& test, Engine& engine, const JointConfig& base,
                                   const std::vector<double>& mu_grid, const std::vector<double>& lambda_grid) {
  if (mu_grid.empty() || lambda_grid.empty()) throw std::invalid_argument("grid search needs non-empty grids");
  GridSearchResult out;
  for (double mu : mu_grid) {
    for (double reg : lambda_grid) {
      JointConfig cfg = base;
      cfg.mu = mu;
      cfg.reg = reg;
      JointSolveResult fit = joint_solve(train, engine, cfg);
      GridPoint p{mu, reg, mse(validation, fit.model, cfg.clamp), mse(test, fit.model, cfg.clamp)};
      if (out.points.empty() || p.validation_mse < out.points[out.best].validation_mse) {
        out.best = out.points.size();
        out.best_model = std::move(fit.model);
      }
      out.points.push_back(p);
    }
  }
  return out;
}

void write_grid_csv(std::ostream& out, const GridSearchResult& result) {
  out << "mu,lambda,validation_mse,test_mse\n";
  out.precision(17);
  for (const auto& p : result.points) {
    out << p.mu << ',' << p.reg << ',' << p.validation_mse << ',' << p.test_mse << '\n';
  }
}

}  // namespace dfacto
