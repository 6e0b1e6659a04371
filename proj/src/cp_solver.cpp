#include "dfacto/cp_solver.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string_view>

#include "dfacto/errors.hpp"

namespace dfacto {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void write_double(std::ostream& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out << std::string_view(buf, res.ptr - buf);
}

constexpr double kRelChangeGuard = 1e-300;

}  // namespace

const Matrix& FactorModel::factor(int mode) const {
  switch (mode) {
    case 1: return A;
    case 2: return B;
    case 3: return C;
    default: throw std::invalid_argument("mode must be 1, 2 or 3");
  }
}

Matrix& FactorModel::factor(int mode) {
  return const_cast<Matrix&>(static_cast<const FactorModel&>(*this).factor(mode));
}

bool FactorModel::all_finite() const {
  return A.allFinite() && B.allFinite() && C.allFinite() && weights.allFinite();
}

FactorModel random_model(const Dims& dims, Index rank, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto fill = [&](Index rows) {
    Matrix M(rows, rank);
    for (Index i = 0; i < rows; ++i)
      for (Index r = 0; r < rank; ++r) M(i, r) = unif(rng);
    return M;
  };
  FactorModel m;
  m.A = fill(dims.i);
  m.B = fill(dims.j);
  m.C = fill(dims.k);
  m.weights = Vector::Ones(rank);
  return m;
}

void SolverConfig::validate() const {
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (!(reg >= 0.0)) throw std::invalid_argument("reg must be >= 0");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
  if (!(line_search.shrink > 0.0 && line_search.shrink < 1.0)) {
    throw std::invalid_argument("line-search shrink must lie in (0, 1)");
  }
  if (!(line_search.initial_step > 0.0)) throw std::invalid_argument("line-search initial step must be > 0");
  if (line_search.max_backtracks < 0) throw std::invalid_argument("max_backtracks must be >= 0");
}

void write_stats_csv(std::ostream& out, const std::vector<IterationStats>& history) {
  out << "iteration,objective,fit,mttkrp_ms,solve_ms,normalize_ms,linesearch_ms,flops,step,backtracks,stalled,"
         "pseudo_inverse\n";
  for (const auto& s : history) {
    out << s.iteration << ',';
    write_double(out, s.objective);
    out << ',';
    write_double(out, s.fit);
    out << ',' << s.times.mttkrp_ms << ',' << s.times.solve_ms << ',' << s.times.normalize_ms << ','
        << s.times.linesearch_ms << ',' << s.flops << ',';
    write_double(out, s.step);
    out << ',' << s.backtracks << ',' << (s.stalled ? 1 : 0) << ',' << (s.pseudo_inverse ? 1 : 0) << '\n';
  }
}

double model_norm_squared(const FactorModel& m) {
  const Matrix Aw = m.weighted_A();
  const Matrix G = (Aw.transpose() * Aw).cwiseProduct(m.B.transpose() * m.B).cwiseProduct(m.C.transpose() * m.C);
  return G.sum();
}

double inner_product(const SparseTensor& t, const FactorModel& m) {
  const Matrix Aw = m.weighted_A();
  double s = 0.0;
  for (const auto& e : t.entries()) {
    double x_hat = 0.0;
    for (Index r = 0; r < m.rank(); ++r) x_hat += Aw(e.i, r) * m.B(e.j, r) * m.C(e.k, r);
    s += e.value * x_hat;
  }
  return s;
}

double plan_inner_product(const MttkrpPlan& plan, const Matrix& Aw, const Matrix& B, const Matrix& C) {
  if (plan.mode() != 1) throw std::invalid_argument("plan_inner_product needs a mode-1 plan");
  const Index R = Aw.cols();
  const CsrMatrix& xt = plan.xhat_t();
  const auto mrp = plan.m_rowptr();
  const auto mcols = plan.m_columns();
  Vector ac(R);
  double s = 0.0;
  for (Index li = 0; li < plan.out_rows(); ++li) {
    const Index i = li + plan.row_offset();
    for (Index slot = mrp[li]; slot < mrp[li + 1]; ++slot) {
      const Index k = mcols[slot];
      for (Index r = 0; r < R; ++r) ac(r) = Aw(i, r) * C(k, r);
      for (Index t = xt.rowptr[slot]; t < xt.rowptr[slot + 1]; ++t) {
        const Index j = xt.columns[t];
        double x_hat = 0.0;
        for (Index r = 0; r < R; ++r) x_hat += ac(r) * B(j, r);
        s += xt.values[t] * x_hat;
      }
    }
  }
  return s;
}

ObjectiveValue assemble_objective(double norm_x_sq, double inner, const FactorModel& m, double reg) {
  const double resid_sq = norm_x_sq - 2.0 * inner + model_norm_squared(m);
  ObjectiveValue out;
  out.objective = 0.5 * resid_sq;
  if (reg != 0.0) {
    out.objective += 0.5 * reg * (m.weighted_A().squaredNorm() + m.B.squaredNorm() + m.C.squaredNorm());
  }
  const double resid = std::sqrt(std::max(0.0, resid_sq));
  if (norm_x_sq > 0.0) {
    out.fit = 1.0 - resid / std::sqrt(norm_x_sq);
  } else {
    out.fit = resid == 0.0 ? 1.0 : 0.0;
  }
  return out;
}

double cp_objective(const SparseTensor& t, const FactorModel& m, double reg) {
  return assemble_objective(t.norm_squared(), inner_product(t, m), m, reg).objective;
}

FactorModel step_model(const FactorModel& m, const Gradients& g, double alpha) {
  FactorModel out;
  out.A = m.A - alpha * g.dA;
  out.B = m.B - alpha * g.dB;
  out.C = m.C - alpha * g.dC;
  out.weights = m.weights;
  return out;
}

// ---------------------------------------------------------------------------

SerialEngine::SerialEngine(const FlattenedViews& views, int threads)
    : views_(views),
      plans_{build_plan(views, 1), build_plan(views, 2), build_plan(views, 3)},
      threads_(threads) {}

Matrix SerialEngine::mttkrp(int mode, const FactorModel& m, FlopCounter& flops) {
  const auto [first, second] = factors_for_mode(mode, m.A, m.B, m.C);
  MttkrpPlan& p = plan(mode);
  Matrix N(p.out_rows(), m.rank());
  if (threads_ > 1) {
    mttkrp_dfacto_threaded(p, first, second, N, threads_, &flops);
  } else {
    mttkrp_dfacto(p, first, second, N, &flops);
  }
  return N;
}

double SerialEngine::inner_product(const FactorModel& m) {
  return plan_inner_product(plan(1), m.weighted_A(), m.B, m.C);
}

double SerialEngine::trial_inner_product(const FactorModel& trial, double) {
  return plan_inner_product(plan(1), trial.weighted_A(), trial.B, trial.C);
}

// ---------------------------------------------------------------------------

Matrix mode_gram(int mode, const FactorModel& m, double reg) {
  auto gram = [](const Matrix& F) -> Matrix { return F.transpose() * F; };
  switch (mode) {
    case 1: return gram_hadamard(gram(m.C), gram(m.B), reg);
    case 2: return gram_hadamard(gram(m.A), gram(m.C), reg);
    case 3: return gram_hadamard(gram(m.B), gram(m.A), reg);
    default: throw std::invalid_argument("mode must be 1, 2 or 3");
  }
}

GramSolve als_solve_factor(const Matrix& N, const Matrix& gram_with_ridge) { return solve_gram(N, gram_with_ridge); }

AlsModeResult als_update_mode(Engine& engine, FactorModel& m, int mode, double reg, FlopCounter& flops,
                              PhaseTimes* times) {
  auto t0 = Clock::now();
  AlsModeResult res;
  res.N = engine.mttkrp(mode, m, flops);
  if (times) times->mttkrp_ms += ms_since(t0);

  t0 = Clock::now();
  GramSolve sol = als_solve_factor(res.N, mode_gram(mode, m, reg));
  res.pseudo_inverse = sol.used_pseudo_inverse;
  if (times) times->solve_ms += ms_since(t0);

  t0 = Clock::now();
  if (reg == 0.0) {
    m.weights = normalize_columns(sol.x);
  } else {
    m.weights = Vector::Ones(m.rank());
  }
  m.factor(mode) = std::move(sol.x);
  if (times) times->normalize_ms += ms_since(t0);

  engine.factor_updated(mode, m);
  return res;
}

IterationStats als_iteration(Engine& engine, FactorModel& m, double reg, int iteration) {
  IterationStats st;
  st.iteration = iteration;
  engine.begin_iteration(iteration, m);
  FlopCounter flops;
  AlsModeResult last;
  for (int mode = 1; mode <= 3; ++mode) {
    last = als_update_mode(engine, m, mode, reg, flops, &st.times);
    st.pseudo_inverse = st.pseudo_inverse || last.pseudo_inverse;
  }
  // N_C = X3 (B ⊙ A) does not depend on C, so <X, X̂> = sum(N_C .* C W).
  const double inner = last.N.cwiseProduct(m.C * m.weights.asDiagonal()).sum();
  const auto ov = assemble_objective(engine.norm_x_squared(), inner, m, reg);
  st.objective = ov.objective;
  st.fit = ov.fit;
  st.flops = flops.multiply_adds;
  return st;
}

// ---------------------------------------------------------------------------

Gradients cp_gradient(Engine& engine, const FactorModel& m, double reg, FlopCounter& flops, double* inner_out) {
  if ((m.weights.array() != 1.0).any()) {
    throw std::invalid_argument("cp_gradient: model weights must all be one");
  }
  const Matrix NA = engine.mttkrp(1, m, flops);
  const Matrix NB = engine.mttkrp(2, m, flops);
  const Matrix NC = engine.mttkrp(3, m, flops);
  Gradients g;
  g.dA = -NA + m.A * mode_gram(1, m, reg);
  g.dB = -NB + m.B * mode_gram(2, m, reg);
  g.dC = -NC + m.C * mode_gram(3, m, reg);
  if (inner_out) *inner_out = NA.cwiseProduct(m.A).sum();
  return g;
}

LineSearchResult backtracking_line_search(const std::function<double(double)>& objective_at, double f0,
                                          double grad_sq_norm, const LineSearchParams& params) {
  LineSearchResult res;
  double alpha = params.initial_step;
  for (int t = 0; t <= params.max_backtracks; ++t) {
    const double f = objective_at(alpha);
    if (std::isfinite(f) && f <= f0 - params.armijo * alpha * grad_sq_norm) {
      res.alpha = alpha;
      res.objective = f;
      res.backtracks = t;
      return res;
    }
    alpha *= params.shrink;
  }
  res.alpha = 0.0;
  res.objective = f0;
  res.backtracks = params.max_backtracks;
  res.stalled = true;
  return res;
}

IterationStats gd_iteration(Engine& engine, FactorModel& m, double reg, double f0, const LineSearchParams& params,
                            int iteration) {
  IterationStats st;
  st.iteration = iteration;
  engine.begin_iteration(iteration, m);

  auto t0 = Clock::now();
  FlopCounter flops;
  double inner0 = 0.0;
  const Gradients g = cp_gradient(engine, m, reg, flops, &inner0);
  st.times.mttkrp_ms = ms_since(t0);

  t0 = Clock::now();
  engine.set_search_direction(g);
  const double norm_x_sq = engine.norm_x_squared();
  ObjectiveValue last;
  auto objective_at = [&](double alpha) {
    const FactorModel trial = step_model(m, g, alpha);
    last = assemble_objective(norm_x_sq, engine.trial_inner_product(trial, alpha), trial, reg);
    return last.objective;
  };
  const LineSearchResult ls = backtracking_line_search(objective_at, f0, g.squared_norm(), params);
  engine.step_accepted(ls.alpha);
  st.times.linesearch_ms = ms_since(t0);

  if (!ls.stalled) {
    m = step_model(m, g, ls.alpha);
    st.objective = ls.objective;
    st.fit = last.fit;
  } else {
    const auto ov = assemble_objective(norm_x_sq, inner0, m, reg);
    st.objective = f0;
    st.fit = ov.fit;
  }
  st.step = ls.alpha;
  st.backtracks = ls.backtracks;
  st.stalled = ls.stalled;
  st.flops = flops.multiply_adds;
  return st;
}

// ---------------------------------------------------------------------------

SolveResult solve_with_engine(Engine& engine, const SolverConfig& config, FactorModel init) {
  config.validate();
  SolveResult res;
  res.model = std::move(init);
  const Dims& d = engine.dims();
  if (config.rank > std::max({d.i, d.j, d.k})) {
    res.warnings.push_back("rank " + std::to_string(config.rank) + " exceeds every tensor dimension");
  }

  engine.begin_iteration(0, res.model);
  const auto ov = assemble_objective(engine.norm_x_squared(), engine.inner_product(res.model), res.model, config.reg);
  if (!std::isfinite(ov.objective)) throw NumericalError("initial objective is not finite");
  res.initial_objective = ov.objective;
  res.initial_fit = ov.fit;

  double f_prev = ov.objective;
  for (int it = 1; it <= config.max_iters; ++it) {
    IterationStats st = config.algorithm == Algorithm::Als
                            ? als_iteration(engine, res.model, config.reg, it)
                            : gd_iteration(engine, res.model, config.reg, f_prev, config.line_search, it);
    if (!std::isfinite(st.objective) || !res.model.all_finite()) {
      throw NumericalError("objective became non-finite at iteration " + std::to_string(it));
    }
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

SolveResult solve(const SparseTensor& t, const SolverConfig& config) {
  config.validate();
  const FlattenedViews views(t);
  SerialEngine engine(views, config.threads);
  return solve_with_engine(engine, config, random_model(t.dims(), config.rank, config.seed));
}

}  // namespace dfacto
