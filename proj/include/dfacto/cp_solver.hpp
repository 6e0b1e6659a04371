#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfacto/dense_ops.hpp"
#include "dfacto/flatten.hpp"
#include "dfacto/mttkrp.hpp"
#include "dfacto/sparse_tensor.hpp"

namespace dfacto {

/// CP model sum_r w_r a_r ∘ b_r ∘ c_r.
struct FactorModel {
  Matrix A;
  Matrix B;
  Matrix C;
  Vector weights;

  Index rank() const noexcept { return A.cols(); }
  const Matrix& factor(int mode) const;
  Matrix& factor(int mode);

  /// A with the weights folded into its columns.
  Matrix weighted_A() const { return A * weights.asDiagonal(); }
  bool all_finite() const;
};

/// Entries i.i.d. uniform(0, 1) from `seed`; weights all one.
FactorModel random_model(const Dims& dims, Index rank, std::uint64_t seed);

enum class Algorithm { Als, Gd };

struct LineSearchParams {
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 50;
};

struct SolverConfig {
  Index rank = 1;
  double reg = 0.0;
  int max_iters = 100;
  double tol = 1e-6;
  Algorithm algorithm = Algorithm::Als;
  LineSearchParams line_search;
  std::uint64_t seed = 1;
  int threads = 1;

  /// Throws std::invalid_argument when rank < 1, tol <= 0, reg < 0 or shrink outside (0, 1).
  void validate() const;
};

struct PhaseTimes {
  double mttkrp_ms = 0.0;
  double solve_ms = 0.0;
  double normalize_ms = 0.0;
  double linesearch_ms = 0.0;
};

struct IterationStats {
  int iteration = 0;
  double objective = 0.0;
  double fit = 0.0;
  PhaseTimes times;
  std::uint64_t flops = 0;
  double step = 0.0;        // GD only
  int backtracks = 0;       // GD only
  bool stalled = false;     // GD: no step satisfied the Armijo condition
  bool pseudo_inverse = false;  // ALS: a Gram system was singular
};

/// Writes the stats history as CSV. Columns:
/// iteration,objective,fit,mttkrp_ms,solve_ms,normalize_ms,linesearch_ms,flops,step,backtracks,stalled,pseudo_inverse
void write_stats_csv(std::ostream& out, const std::vector<IterationStats>& history);

// ---------------------------------------------------------------------------
// Objective pieces

/// ||X̂||^2 = 1^T (W A^T A W .* B^T B .* C^T C) 1, never materializing X̂.
double model_norm_squared(const FactorModel& m);

/// <X, X̂> summed over the stored entries of t.
double inner_product(const SparseTensor& t, const FactorModel& m);

/// <X, X̂> restricted to the entries held by a mode-1 plan (or a shard of
/// one). Summation order is fixed by the plan, so a full plan and the sum of
/// its shards in row order agree to rounding.
double plan_inner_product(const MttkrpPlan& mode1_plan, const Matrix& weighted_A, const Matrix& B,
                          const Matrix& C);

struct ObjectiveValue {
  double objective = 0.0;
  double fit = 0.0;
};

/// 1/2 ||X - X̂||^2 + 1/2 reg (||A||^2 + ||B||^2 + ||C||^2) from its parts.
/// `A` in the ridge term is the weighted A.
ObjectiveValue assemble_objective(double norm_x_sq, double inner, const FactorModel& m, double reg);

double cp_objective(const SparseTensor& t, const FactorModel& m, double reg);

// ---------------------------------------------------------------------------
// Engines: where MTTKRP and data inner products are computed.

struct Gradients {
  Matrix dA;
  Matrix dB;
  Matrix dC;

  double squared_norm() const { return dA.squaredNorm() + dB.squaredNorm() + dC.squaredNorm(); }
};

/// m - alpha * grads (weights kept).
FactorModel step_model(const FactorModel& m, const Gradients& g, double alpha);

/// Computes the data-dependent pieces of the solvers. The serial engine works
/// on local plans; the distributed master forwards each call to workers.
class Engine {
 public:
  virtual ~Engine() = default;

  virtual const Dims& dims() const = 0;
  virtual double norm_x_squared() const = 0;

  /// Called once per outer iteration with the model the iteration starts from.
  virtual void begin_iteration(int iteration, const FactorModel& m) = 0;
  /// N for `mode` using the current factors of `m`.
  virtual Matrix mttkrp(int mode, const FactorModel& m, FlopCounter& flops) = 0;
  /// ALS: factor `mode` of `m` changed (weights too).
  virtual void factor_updated(int mode, const FactorModel& m) = 0;
  /// <X, X̂(m)> for the model last seen by begin_iteration.
  virtual double inner_product(const FactorModel& m) = 0;
  /// GD: fixes the search direction for subsequent trial evaluations.
  virtual void set_search_direction(const Gradients& g) = 0;
  /// GD: <X, X̂(trial)> with trial == step_model(current, direction, alpha).
  virtual double trial_inner_product(const FactorModel& trial, double alpha) = 0;
  /// GD: the step accepted for this iteration (0 when stalled).
  virtual void step_accepted(double alpha) = 0;
};

/// Single-process engine over flattened views and three plans.
class SerialEngine final : public Engine {
 public:
  explicit SerialEngine(const FlattenedViews& views, int threads = 1);

  const Dims& dims() const override { return views_.dims(); }
  double norm_x_squared() const override { return views_.norm_squared(); }
  void begin_iteration(int, const FactorModel&) override {}
  Matrix mttkrp(int mode, const FactorModel& m, FlopCounter& flops) override;
  void factor_updated(int, const FactorModel&) override {}
  double inner_product(const FactorModel& m) override;
  void set_search_direction(const Gradients&) override {}
  double trial_inner_product(const FactorModel& trial, double alpha) override;
  void step_accepted(double) override {}

  MttkrpPlan& plan(int mode) { return plans_.at(mode - 1); }

 private:
  const FlattenedViews& views_;
  std::array<MttkrpPlan, 3> plans_;
  int threads_;
};

// ---------------------------------------------------------------------------
// ALS

/// Gram matrix of the factors other than `mode`, Hadamard-multiplied, plus reg*I.
Matrix mode_gram(int mode, const FactorModel& m, double reg);

/// Unnormalized least-squares factor N (G + reg I)^-1.
GramSolve als_solve_factor(const Matrix& N, const Matrix& gram_with_ridge);

struct AlsModeResult {
  Matrix N;  // MTTKRP result used for the update
  bool pseudo_inverse = false;
};

/// One ALS factor update for `mode`. When reg == 0 the new factor is
/// column-normalized and its norms become the weights; otherwise weights are 1.
AlsModeResult als_update_mode(Engine& engine, FactorModel& m, int mode, double reg, FlopCounter& flops,
                              PhaseTimes* times = nullptr);

/// Updates A, B, then C. The objective in the returned stats comes from N_C.
IterationStats als_iteration(Engine& engine, FactorModel& m, double reg, int iteration = 0);

// ---------------------------------------------------------------------------
// GD

/// Gradients of the regularized objective at m (weights ignored, i.e. all ones).
/// Also returns the three N matrices' contribution to flops.
Gradients cp_gradient(Engine& engine, const FactorModel& m, double reg, FlopCounter& flops,
                      double* inner_out = nullptr);

struct LineSearchResult {
  double alpha = 0.0;
  double objective = 0.0;  // objective at the accepted point (f0 if stalled)
  int backtracks = 0;
  bool stalled = false;
};

/// Backtracking with the Armijo rule f(m - a g) <= f0 - c a ||g||^2 over
/// a = a0 * shrink^t, t = 0..max_backtracks. `objective_at(alpha)` evaluates
/// the trial point; non-finite values reject the trial.
LineSearchResult backtracking_line_search(const std::function<double(double)>& objective_at, double f0,
                                          double grad_sq_norm, const LineSearchParams& params);

/// One simultaneous GD step. `f0` is the objective at m.
IterationStats gd_iteration(Engine& engine, FactorModel& m, double reg, double f0,
                            const LineSearchParams& params, int iteration = 0);

// ---------------------------------------------------------------------------
// Driver

struct SolveResult {
  FactorModel model;
  std::vector<IterationStats> history;
  double initial_objective = 0.0;
  double initial_fit = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Runs ALS or GD from `init` until the relative objective change drops below
/// tol or max_iters is reached. Throws NumericalError on a non-finite objective.
SolveResult solve_with_engine(Engine& engine, const SolverConfig& config, FactorModel init);

/// Builds views and plans, initializes from the seed and runs the solver.
SolveResult solve(const SparseTensor& t, const SolverConfig& config);

}  // namespace dfacto
