#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <sstream>

#include "dfacto/cp_solver.hpp"
#include "dfacto/datagen.hpp"
#include "dfacto/errors.hpp"
#include "dfacto/flatten.hpp"
#include "oracles.hpp"
#include "properties.hpp"

using namespace dfacto;

namespace {

// Dense rank-R tensor from a model, every cell stored.
SparseTensor dense_from_model(const FactorModel& m) {
  std::vector<Entry> e;
  for (Index i = 0; i < m.A.rows(); ++i)
    for (Index j = 0; j < m.B.rows(); ++j)
      for (Index k = 0; k < m.C.rows(); ++k) e.push_back({i, j, k, oracle::model_value(m, i, j, k)});
  return SparseTensor::from_entries({m.A.rows(), m.B.rows(), m.C.rows()}, std::move(e));
}

FactorModel positive_model(std::mt19937_64& rng, const Dims& d, Index R) {
  return {oracle::random_matrix(rng, d.i, R, 0.5, 1.5), oracle::random_matrix(rng, d.j, R, 0.5, 1.5),
          oracle::random_matrix(rng, d.k, R, 0.5, 1.5), Vector::Ones(R)};
}

}  // namespace

TEST(Objective, ExactModelIsZero) {
  std::mt19937_64 rng(1);
  const FactorModel truth = positive_model(rng, {4, 5, 3}, 1);
  const SparseTensor t = dense_from_model(truth);
  EXPECT_NEAR(cp_objective(t, truth, 0.0), 0.0, 1e-12 * t.norm_squared());
}

TEST(Objective, EmptyTensorIsHalfModelNorm) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Dims d{4, 6, 5};
    const SparseTensor t = SparseTensor::from_entries(d, {});
    FactorModel m = oracle::random_factors(rng, d, 3);
    m.weights = oracle::random_matrix(rng, 3, 1, 0.5, 2.0);
    const double want = oracle::cp_objective(oracle::densify(t), m, 0.0);
    EXPECT_NEAR(cp_objective(t, m, 0.0), want, 1e-10 * want);
    EXPECT_NEAR(0.5 * model_norm_squared(m), want, 1e-10 * want);
  }
}

TEST(Objective, ZeroModelWithRidgeIsHalfDataNorm) {
  std::mt19937_64 rng(3);
  const SparseTensor t = oracle::random_tensor(rng, 8, 100);
  const FactorModel zero{Matrix::Zero(t.dims().i, 2), Matrix::Zero(t.dims().j, 2), Matrix::Zero(t.dims().k, 2),
                         Vector::Ones(2)};
  EXPECT_DOUBLE_EQ(cp_objective(t, zero, 0.7), 0.5 * t.norm_squared());
}

TEST(Objective, GramExpansionMatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const SparseTensor t = oracle::random_tensor(rng, 6, 100);
    FactorModel m = oracle::random_factors(rng, t.dims(), 1 + trial % 3);
    m.weights = oracle::random_matrix(rng, m.rank(), 1, 0.5, 2.0);
    for (double reg : {0.0, 0.3}) {
      const double want = oracle::cp_objective(oracle::densify(t), m, reg);
      EXPECT_NEAR(cp_objective(t, m, reg), want, 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(Objective, PlanInnerProductMatchesEntrySum) {
  std::mt19937_64 rng(5);
  const SparseTensor t = oracle::random_tensor(rng, 9, 150);
  const FlattenedViews v(t);
  const FactorModel m = oracle::random_factors(rng, t.dims(), 3);
  const MttkrpPlan plan = build_plan(v, 1);
  EXPECT_NEAR(plan_inner_product(plan, m.weighted_A(), m.B, m.C), inner_product(t, m), 1e-12);
}

TEST(Objective, FitIsOneForExactModel) {
  std::mt19937_64 rng(6);
  const FactorModel truth = positive_model(rng, {3, 4, 5}, 2);
  const SparseTensor t = dense_from_model(truth);
  const ObjectiveValue ov = assemble_objective(t.norm_squared(), inner_product(t, truth), truth, 0.0);
  EXPECT_NEAR(ov.fit, 1.0, 1e-6);
  EXPECT_LE(ov.fit, 1.0);
}

TEST(Als, ExactRankOneIsAFixedPoint) {
  std::mt19937_64 rng(7);
  const FactorModel truth = positive_model(rng, {4, 3, 5}, 1);
  const SparseTensor t = dense_from_model(truth);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = truth;
  als_iteration(engine, m, 0.0);
  EXPECT_LE(cp_objective(t, m, 0.0), 1e-12 * t.norm_squared());
  for (int mode = 1; mode <= 3; ++mode) {
    const Vector u = truth.factor(mode).col(0).normalized();
    EXPECT_NEAR(std::abs(u.dot(m.factor(mode).col(0))), 1.0, 1e-12);
    EXPECT_NEAR(m.factor(mode).col(0).norm(), 1.0, 1e-12);
  }
}

TEST(Als, MonotoneWithAndWithoutRidge) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const SparseTensor t = oracle::random_tensor(rng, 10, 400);
    for (double reg : {0.0, 0.1}) {
      EXPECT_EQ(props::als_monotone_violations(t, 3, reg, 50, 1e-9, 100 + trial), 0u) << "reg " << reg;
    }
  }
  // The 8x9x10 instance with R=3.
  const SparseTensor t = gen_preferential({{8, 9, 10}, 300, 4, ValueDistribution::Uniform});
  EXPECT_EQ(props::als_monotone_violations(t, 3, 0.0, 50, 1e-9, 1), 0u);
}

TEST(Als, NormalizesOnlyWithoutRidge) {
  std::mt19937_64 rng(9);
  const SparseTensor t = oracle::random_tensor(rng, 8, 200);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = random_model(t.dims(), 2, 3);
  als_iteration(engine, m, 0.0);
  for (int mode = 1; mode <= 3; ++mode)
    for (Index r = 0; r < 2; ++r) {
      const double n = m.factor(mode).col(r).norm();
      EXPECT_TRUE(std::abs(n - 1.0) < 1e-12 || n == 0.0);
    }
  FactorModel w = random_model(t.dims(), 2, 3);
  als_iteration(engine, w, 0.5);
  EXPECT_EQ(w.weights, Vector::Ones(2));
}

TEST(Als, HugeRidgeShrinksTheUpdate) {
  std::mt19937_64 rng(10);
  const SparseTensor t = oracle::random_tensor(rng, 8, 200);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = random_model(t.dims(), 1, 4);
  FlopCounter flops;
  const AlsModeResult r = als_update_mode(engine, m, 1, 1e8, flops);
  EXPECT_LE(m.A.norm(), 1e-6 * r.N.norm());
}

TEST(Als, UpdateScalesWithTheData) {
  std::mt19937_64 rng(11);
  const SparseTensor t = oracle::random_tensor(rng, 8, 200);
  std::vector<Entry> scaled(t.entries().begin(), t.entries().end());
  for (auto& e : scaled) e.value *= 3.5;
  const SparseTensor ts = SparseTensor::from_entries(t.dims(), scaled);
  const FlattenedViews v(t), vs(ts);
  SerialEngine e1(v), e2(vs);
  const FactorModel m = random_model(t.dims(), 3, 5);
  FlopCounter flops;
  const Matrix G = mode_gram(1, m, 0.2);
  const Matrix a1 = als_solve_factor(e1.mttkrp(1, m, flops), G).x;
  const Matrix a2 = als_solve_factor(e2.mttkrp(1, m, flops), G).x;
  EXPECT_LE((a2 - 3.5 * a1).norm(), 1e-12 * a2.norm());
}

TEST(Als, SingularGramIsFlagged) {
  // Two identical columns make every Gram matrix singular.
  const SparseTensor t = oracle::worked_example();
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = random_model(t.dims(), 1, 1);
  FactorModel twin{Matrix(2, 2), Matrix(3, 2), Matrix(3, 2), Vector::Ones(2)};
  twin.A << m.A, m.A;
  twin.B << m.B, m.B;
  twin.C << m.C, m.C;
  FlopCounter flops;
  const AlsModeResult r = als_update_mode(engine, twin, 1, 0.0, flops);
  EXPECT_TRUE(r.pseudo_inverse);
  EXPECT_TRUE(twin.all_finite());
}

TEST(Gradient, ZeroAtExactFactorization) {
  std::mt19937_64 rng(12);
  const FactorModel truth = positive_model(rng, {3, 4, 3}, 2);
  const SparseTensor t = dense_from_model(truth);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FlopCounter flops;
  const Gradients g = cp_gradient(engine, truth, 0.0, flops);
  EXPECT_LE(g.dA.cwiseAbs().maxCoeff(), 1e-12 * 10);
  EXPECT_LE(g.dB.cwiseAbs().maxCoeff(), 1e-12 * 10);
  EXPECT_LE(g.dC.cwiseAbs().maxCoeff(), 1e-12 * 10);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<Index> rank(1, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const SparseTensor t = oracle::random_tensor(rng, 8, 150);
    const FactorModel m = oracle::random_factors(rng, t.dims(), rank(rng));
    EXPECT_LE(props::cp_gradient_error(t, m, trial % 2 ? 0.3 : 0.0), 1e-6) << "trial " << trial;
  }
}

TEST(Gradient, RidgeAddsRegTimesFactor) {
  std::mt19937_64 rng(14);
  const SparseTensor t = oracle::random_tensor(rng, 8, 150);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  const FactorModel m = oracle::random_factors(rng, t.dims(), 2);
  FlopCounter flops;
  const Gradients g0 = cp_gradient(engine, m, 0.0, flops);
  const Gradients g1 = cp_gradient(engine, m, 0.25, flops);
  EXPECT_LE((g1.dA - g0.dA - 0.25 * m.A).norm(), 1e-12 * std::max(1.0, g1.dA.norm()));
  EXPECT_LE((g1.dB - g0.dB - 0.25 * m.B).norm(), 1e-12 * std::max(1.0, g1.dB.norm()));
  EXPECT_LE((g1.dC - g0.dC - 0.25 * m.C).norm(), 1e-12 * std::max(1.0, g1.dC.norm()));
}

TEST(LineSearch, ZeroGradientAcceptsInitialStep) {
  const LineSearchParams p;
  const auto r = backtracking_line_search([](double) { return 5.0; }, 5.0, 0.0, p);
  EXPECT_EQ(r.alpha, 1.0);
  EXPECT_EQ(r.backtracks, 0);
  EXPECT_FALSE(r.stalled);
}

TEST(LineSearch, QuadraticSatisfiesArmijo) {
  // f(x) = 2 x^2 at x = 1, gradient 4; f(1 - 4a) = 2 (1 - 4a)^2.
  const LineSearchParams p;
  auto f = [](double a) { return 2.0 * (1 - 4 * a) * (1 - 4 * a); };
  const auto r = backtracking_line_search(f, 2.0, 16.0, p);
  EXPECT_FALSE(r.stalled);
  EXPECT_EQ(r.alpha, 0.25);
  EXPECT_EQ(r.backtracks, 2);
  EXPECT_LE(f(r.alpha), 2.0 - p.armijo * r.alpha * 16.0);
  EXPECT_EQ(r.objective, f(r.alpha));
}

TEST(LineSearch, HugeInitialStepBacktracks) {
  std::mt19937_64 rng(15);
  const SparseTensor t = oracle::random_tensor(rng, 8, 200);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  const FactorModel m = random_model(t.dims(), 2, 6);
  FlopCounter flops;
  const Gradients g = cp_gradient(engine, m, 0.0, flops);
  const double f0 = cp_objective(t, m, 0.0);
  LineSearchParams p;
  p.initial_step = 1e6;
  const auto r = backtracking_line_search([&](double a) { return cp_objective(t, step_model(m, g, a), 0.0); }, f0,
                                          g.squared_norm(), p);
  ASSERT_FALSE(r.stalled);
  EXPECT_LT(r.alpha, 1e6);
  EXPECT_LE(cp_objective(t, step_model(m, g, r.alpha), 0.0), f0 - p.armijo * r.alpha * g.squared_norm());
}

TEST(LineSearch, NonFiniteTrialsAreRejected) {
  const LineSearchParams p;
  auto f = [](double a) { return a > 0.1 ? std::numeric_limits<double>::quiet_NaN() : 1.0 - a; };
  const auto r = backtracking_line_search(f, 1.0, 1.0, p);
  EXPECT_FALSE(r.stalled);
  EXPECT_LE(r.alpha, 0.1);
}

TEST(LineSearch, StallReturnsZeroStep) {
  LineSearchParams p;
  p.max_backtracks = 3;
  const auto r = backtracking_line_search([](double) { return 10.0; }, 1.0, 1.0, p);
  EXPECT_TRUE(r.stalled);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_EQ(r.objective, 1.0);
}

TEST(Gd, StationaryPointUnchanged) {
  std::mt19937_64 rng(16);
  const FactorModel truth = positive_model(rng, {3, 3, 4}, 1);
  const SparseTensor t = dense_from_model(truth);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = truth;
  const IterationStats st = gd_iteration(engine, m, 0.0, cp_objective(t, truth, 0.0), {});
  EXPECT_LE((m.A - truth.A).norm(), 1e-10);
  EXPECT_LE((m.B - truth.B).norm(), 1e-10);
  EXPECT_LE((m.C - truth.C).norm(), 1e-10);
  EXPECT_LE(st.objective, 1e-20);
}

TEST(Gd, AcceptedStepsSatisfyArmijo) {
  std::mt19937_64 rng(17);
  const SparseTensor t = oracle::random_tensor(rng, 9, 250);
  const FlattenedViews v(t);
  SerialEngine engine(v);
  FactorModel m = random_model(t.dims(), 3, 7);
  const LineSearchParams p;
  double f = cp_objective(t, m, 0.1);
  for (int it = 0; it < 30; ++it) {
    const FactorModel before = m;
    FlopCounter flops;
    const Gradients g = cp_gradient(engine, before, 0.1, flops);
    const IterationStats st = gd_iteration(engine, m, 0.1, f, p, it + 1);
    const double f_new = cp_objective(t, m, 0.1);
    EXPECT_NEAR(f_new, st.objective, 1e-9 * std::max(1.0, f));
    if (!st.stalled) EXPECT_LE(f_new, f - p.armijo * st.step * g.squared_norm() + 1e-12 * f);
    EXPECT_LE(f_new, f);
    f = f_new;
  }
}

TEST(Gd, SingleEntryConverges) {
  const SparseTensor t = SparseTensor::from_entries({2, 2, 2}, {{1, 0, 1, 2.0}});
  SolverConfig c;
  c.rank = 1;
  c.algorithm = Algorithm::Gd;
  c.max_iters = 200;
  c.tol = 1e-15;
  const SolveResult r = solve(t, c);
  const double f = r.history.empty() ? r.initial_objective : r.history.back().objective;
  EXPECT_LE(f, 1e-8);
}

TEST(Solve, RankOneRecoveredByBothAlgorithms) {
  std::mt19937_64 rng(18);
  const FactorModel truth = positive_model(rng, {5, 4, 6}, 1);
  const SparseTensor t = dense_from_model(truth);
  for (Algorithm a : {Algorithm::Als, Algorithm::Gd}) {
    SolverConfig c;
    c.rank = 1;
    c.algorithm = a;
    c.max_iters = a == Algorithm::Als ? 50 : 1000;
    c.tol = 1e-14;
    const SolveResult r = solve(t, c);
    ASSERT_FALSE(r.history.empty());
    EXPECT_GE(r.history.back().fit, 1.0 - 1e-6) << (a == Algorithm::Als ? "als" : "gd");
  }
}

TEST(Solve, ZeroIterationsReturnsInitialization) {
  const SparseTensor t = oracle::worked_example();
  SolverConfig c;
  c.rank = 2;
  c.max_iters = 0;
  c.seed = 9;
  const SolveResult r = solve(t, c);
  const FactorModel init = random_model(t.dims(), 2, 9);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.model.A, init.A);
  EXPECT_EQ(r.model.B, init.B);
  EXPECT_EQ(r.model.C, init.C);
  EXPECT_DOUBLE_EQ(r.initial_objective, cp_objective(t, init, 0.0));
}

TEST(Solve, PlantedRecoverySmall) {
  auto [t, truth] = gen_planted({{15, 15, 15}, 15 * 15 * 15, 3, ValueDistribution::Uniform, 3, 0.0});
  SolverConfig c;
  c.rank = 3;
  c.max_iters = 300;
  c.tol = 1e-12;
  const SolveResult r = solve(t, c);
  EXPECT_GE(r.history.back().fit, 0.999);
}

TEST(Solve, WorkedExampleAlsIsMonotone) {
  SolverConfig c;
  c.rank = 2;
  c.max_iters = 5;
  c.tol = 1e-300;
  const SolveResult r = solve(oracle::worked_example(), c);
  ASSERT_EQ(r.history.size(), 5u);
  double prev = r.initial_objective;
  for (const auto& s : r.history) {
    EXPECT_LE(s.objective, prev * (1 + 1e-12));
    EXPECT_LE(s.fit, 1.0);
    prev = s.objective;
  }
}

TEST(Solve, RankAboveDimsWarns) {
  SolverConfig c;
  c.rank = 4;
  c.max_iters = 2;
  const SolveResult r = solve(oracle::worked_example(), c);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Solve, NonFiniteObjectiveAborts) {
  const SparseTensor t =
      SparseTensor::from_entries({1, 1, 1}, {{0, 0, 0, std::numeric_limits<double>::infinity()}});
  SolverConfig c;
  EXPECT_THROW(solve(t, c), NumericalError);
}

TEST(Solve, Deterministic) {
  std::mt19937_64 rng(19);
  const SparseTensor t = oracle::random_tensor(rng, 10, 300);
  for (Algorithm a : {Algorithm::Als, Algorithm::Gd}) {
    SolverConfig c;
    c.rank = 3;
    c.algorithm = a;
    c.max_iters = 10;
    EXPECT_TRUE(props::identical_trajectory(solve(t, c), solve(t, c)));
  }
}

TEST(Config, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  c.rank = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.tol = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.reg = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.line_search.shrink = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Stats, CsvHeaderAndRows) {
  SolverConfig c;
  c.rank = 2;
  c.max_iters = 3;
  c.tol = 1e-300;
  const SolveResult r = solve(oracle::worked_example(), c);
  std::ostringstream out;
  write_stats_csv(out, r.history);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "iteration,objective,fit,mttkrp_ms,solve_ms,normalize_ms,linesearch_ms,flops,step,backtracks,stalled,"
            "pseudo_inverse");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
