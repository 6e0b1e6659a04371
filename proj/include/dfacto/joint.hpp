#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfacto/cp_solver.hpp"
#include "dfacto/csr_matrix.hpp"

namespace dfacto {

struct RatingRecord {
  Index user = 0;
  Index item = 0;
  double rating = 0.0;
  bool has_review = false;
};

/// Observed user x item ratings, stored by row and by column.
class RatingsMatrix {
 public:
  RatingsMatrix() = default;

  /// Throws RangeError for an index outside users x items and
  /// std::invalid_argument for a duplicate pair or a non-finite rating.
  static RatingsMatrix from_records(Index users, Index items, const std::vector<RatingRecord>& records);

  Index users() const noexcept { return by_row_.nrows; }
  Index items() const noexcept { return by_row_.ncols; }
  std::size_t size() const noexcept { return by_row_.nnz(); }
  bool empty() const noexcept { return size() == 0; }

  const CsrMatrix& by_row() const noexcept { return by_row_; }
  const CsrMatrix& by_column() const noexcept { return by_col_; }

 private:
  CsrMatrix by_row_;
  CsrMatrix by_col_;
};

/// Lines "user item rating [has_review]". Blank lines and '#' comments are
/// skipped. Throws ParseError with the line number on malformed input.
std::vector<RatingRecord> parse_ratings(std::istream& in, int index_base = 1);
std::vector<RatingRecord> read_ratings_file(const std::string& path, int index_base = 1);

/// Linear rescale of all ratings onto [lo, hi]. Constant ratings map to hi.
void rescale_ratings(std::vector<RatingRecord>& records, double lo = 0.0, double hi = 5.0);

struct RatingSplit {
  std::vector<RatingRecord> train;
  std::vector<RatingRecord> validation;
  std::vector<RatingRecord> test;
};

/// Shuffles under `seed`, takes 60% / 20% / 20%, then drops validation and
/// test records whose user or item never occurs in train. Throws
/// EmptyInputError when train ends up empty.
RatingSplit split_ratings(std::vector<RatingRecord> records, std::uint64_t seed);

struct RatingClamp {
  bool enabled = false;
  double lo = 0.0;
  double hi = 5.0;
};

struct JointConfig {
  double mu = 1.0;
  double reg = 0.1;
  Index rank = 1;
  int max_iters = 100;
  double tol = 1e-6;
  Algorithm algorithm = Algorithm::Als;
  LineSearchParams line_search;
  std::uint64_t seed = 1;
  RatingClamp clamp;

  /// Same checks as SolverConfig plus mu >= 0.
  void validate() const;
};

/// The review tensor term goes through `engine` (dims I x J x K with I, J
/// matching Y). The model's weights are taken to be one.
///
/// sum_{(i,j) observed} 1/2 (y_ij - a_i b_j^T)^2 + mu/2 ||X - X̂||^2
///   + reg/2 (||A||^2 + ||B||^2 + ||C||^2)
double joint_objective(const RatingsMatrix& Y, Engine& engine, const FactorModel& m, double mu, double reg);

/// Gradient of joint_objective. The rating part of row i sums only over the
/// items row i rated.
Gradients joint_gradient(const RatingsMatrix& Y, Engine& engine, const FactorModel& m, double mu, double reg,
                         FlopCounter* flops = nullptr);

/// Exact block minimization: every row of A, then every row of B, then C.
/// Returns true if some per-row system was singular and solved in the
/// least-squares sense.
bool joint_als_update(const RatingsMatrix& Y, Engine& engine, FactorModel& m, double mu, double reg,
                      FlopCounter* flops = nullptr);

struct JointIterationStats {
  int iteration = 0;
  double objective = 0.0;
  double train_mse = 0.0;
  double step = 0.0;
  int backtracks = 0;
  bool stalled = false;
  bool pseudo_inverse = false;
  std::uint64_t flops = 0;
};

struct JointSolveResult {
  FactorModel model;
  std::vector<JointIterationStats> history;
  double initial_objective = 0.0;
  bool converged = false;
};

/// ALS or GD on the joint objective from random_model(dims, rank, seed).
/// Stops like solve(). Throws NumericalError on a non-finite objective.
JointSolveResult joint_solve(const RatingsMatrix& Y, Engine& engine, const JointConfig& config);

/// Mean of (y_ij - a_i b_j^T)^2 over the stored ratings. Throws
/// EmptyInputError for an empty set.
double mse(const RatingsMatrix& test, const FactorModel& m, const RatingClamp& clamp = {});

std::vector<double> default_mu_grid();
std::vector<double> default_lambda_grid();

struct GridPoint {
  double mu = 0.0;
  double reg = 0.0;
  double validation_mse = 0.0;
  double test_mse = 0.0;
};

struct GridSearchResult {
  std::vector<GridPoint> points;  // mu-major, in grid order
  std::size_t best = 0;           // lowest validation MSE; first wins ties
  FactorModel best_model;
};

/// Fits every (mu, reg) pair on `train` and evaluates both held-out sets once.
/// Selection looks at validation MSE only.
GridSearchResult joint_grid_search(const RatingsMatrix& train, const RatingsMatrix& validation,
                                   const RatingsMatrix& test, Engine& engine, const JointConfig& base,
                                   const std::vector<double>& mu_grid, const std::vector<double>& lambda_grid);

/// Columns: mu,lambda,validation_mse,test_mse
void write_grid_csv(std::ostream& out, const GridSearchResult& result);

}  // namespace dfacto
