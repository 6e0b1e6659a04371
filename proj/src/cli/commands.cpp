#include "cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "cli/csv_io.hpp"
#include "dfacto/cp_solver.hpp"
#include "dfacto/datagen.hpp"
#include "dfacto/distributed/master.hpp"
#include "dfacto/distributed/worker.hpp"
#include "dfacto/errors.hpp"
#include "dfacto/joint.hpp"

namespace dfacto::cli {

namespace {

// Thrown for problems the user can fix by changing flags.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a command ends up with no work.
struct NothingToRun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverFlags {
  std::string tensor;
  Index rank = 1;
  std::string algo = "als";
  double reg = 0.0;
  int iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  std::string out = ".";
  int index_base = 1;
  int threads = 1;

  void add_to(CLI::App* cmd, bool tensor_flag = true) {
    if (tensor_flag) cmd->add_option("--tensor", tensor, "Tensor text file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--rank", rank, "CP rank")->check(CLI::PositiveNumber);
    cmd->add_option("--algo", algo, "als or gd")->check(CLI::IsMember({"als", "gd"}));
    cmd->add_option("--reg", reg, "Ridge weight lambda")->check(CLI::NonNegativeNumber);
    cmd->add_option("--iters", iters, "Maximum outer iterations")->check(CLI::NonNegativeNumber);
    cmd->add_option("--tol", tol, "Relative objective change that stops the solver")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "Initialization seed");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--index-base", index_base, "0 or 1")->check(CLI::IsMember({0, 1}));
    cmd->add_option("--threads", threads, "Kernel threads")->check(CLI::PositiveNumber);
  }

  SolverConfig config() const {
    SolverConfig c;
    c.rank = rank;
    c.reg = reg;
    c.max_iters = iters;
    c.tol = tol;
    c.algorithm = algo == "gd" ? Algorithm::Gd : Algorithm::Als;
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

// "a,b,c" into exactly `n` integers.
std::vector<std::uint64_t> parse_int_list(const std::string& s, std::size_t n, const char* what) {
  std::vector<std::uint64_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t x = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw UsageError(std::string(what) + ": '" + item + "' is not a non-negative integer");
    }
    v.push_back(x);
  }
  if (v.size() != n) throw UsageError(std::string(what) + ": expected " + std::to_string(n) + " comma-separated values");
  return v;
}

struct SynthSpec {
  Dims dims;
  std::size_t nnz = 0;
  std::uint64_t seed = 1;
};

SynthSpec parse_synth(const std::string& s) {
  const auto v = parse_int_list(s, 5, "--synth I,J,K,nnz,seed");
  if (v[0] == 0 || v[1] == 0 || v[2] == 0) throw UsageError("--synth: dimensions must be positive");
  return {{static_cast<Index>(v[0]), static_cast<Index>(v[1]), static_cast<Index>(v[2])},
          static_cast<std::size_t>(v[3]), v[4]};
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

void print_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

void write_solve_outputs(const SolveResult& res, const SolverFlags& f, std::ostream& out) {
  write_model(f.out, res.model);
  const std::string stats_path = (std::filesystem::path(f.out) / "stats.csv").string();
  std::ofstream stats(stats_path);
  if (!stats) throw std::runtime_error("cannot write " + stats_path);
  write_stats_csv(stats, res.history);

  const double final_obj = res.history.empty() ? res.initial_objective : res.history.back().objective;
  const double final_fit = res.history.empty() ? res.initial_fit : res.history.back().fit;
  out << "rank=" << f.rank << " algo=" << f.algo << " reg=" << fmt(f.reg) << " seed=" << f.seed
      << " threads=" << f.threads << '\n'
      << "iterations=" << res.history.size() << " converged=" << (res.converged ? "yes" : "no")
      << " initial_objective=" << fmt(res.initial_objective, 10) << " objective=" << fmt(final_obj, 10)
      << " fit=" << fmt(final_fit, 10) << '\n'
      << "wrote " << f.out << "/{A,B,C,weights,stats}.csv\n";
}

// ---------------------------------------------------------------------------

int cmd_factorize(const SolverFlags& f, int workers, std::ostream& out, std::ostream& err) {
  const ParseResult parsed = read_tensor_file(f.tensor, f.index_base);
  if (parsed.merged_duplicates) err << "note: summed " << parsed.merged_duplicates << " duplicate entries\n";
  const SolverConfig cfg = f.config();
  SolveResult res = workers > 0 ? solve_distributed_inproc(parsed.tensor, cfg, workers) : solve(parsed.tensor, cfg);
  print_warnings(err, res.warnings);
  write_solve_outputs(res, f, out);
  return kExitOk;
}

int cmd_master(const SolverFlags& f, const std::vector<std::string>& worker_addrs, std::ostream& out,
               std::ostream& err) {
  if (worker_addrs.empty()) throw UsageError("--workers needs at least one host:port");
  const ParseResult parsed = read_tensor_file(f.tensor, f.index_base);
  std::vector<std::unique_ptr<Channel>> channels;
  for (const auto& a : worker_addrs) channels.push_back(tcp_connect(parse_endpoint(a)));
  SolveResult res = master_run(parsed.tensor, f.config(), std::move(channels));
  print_warnings(err, res.warnings);
  write_solve_outputs(res, f, out);
  return kExitOk;
}

int cmd_worker(const std::string& listen, const std::string& port_file, int threads, std::ostream& out) {
  TcpListener listener(parse_endpoint(listen));
  out << "listening on port " << listener.port() << std::endl;
  if (!port_file.empty()) {
    const std::string tmp = port_file + ".tmp";
    {
      std::ofstream pf(tmp);
      pf << listener.port() << '\n';
    }
    std::filesystem::rename(tmp, port_file);
  }
  auto ch = listener.accept();
  const WorkerReport rep = run_worker(*ch, threads);
  out << "worker " << rep.worker_id << " done: " << rep.messages << " messages, " << rep.shard_results
      << " shard results, " << rep.resync_requests << " resync requests\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchFlags {
  std::string tensor;
  std::string synth;
  Index rank = 10;
  std::vector<std::string> kernels{"dfacto", "naive", "toolbox", "gigatensor"};
  int repeat = 3;
  int threads = 1;
  std::uint64_t seed = 1;
  int index_base = 1;
  std::string out;
  std::uint64_t naive_cap = kDefaultNaiveCap;
};

struct BenchRow {
  int mode;
  std::string kernel;
  std::string status;
  double median_ms = 0.0;
  std::uint64_t flops = 0;
  std::uint64_t expected = 0;
  double diff = 0.0;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_benchmark(const BenchFlags& f, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> known{"dfacto", "naive", "toolbox", "gigatensor"};
  std::vector<std::string> kernels;
  for (const auto& k : f.kernels) {
    if (k.empty()) continue;
    if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError("unknown kernel '" + k + "'");
    kernels.push_back(k);
  }
  if (kernels.empty()) throw NothingToRun("no kernels requested");
  if (f.tensor.empty() == f.synth.empty()) throw UsageError("give exactly one of --tensor and --synth");

  SparseTensor t;
  std::string source;
  if (!f.tensor.empty()) {
    t = read_tensor_file(f.tensor, f.index_base).tensor;
    source = f.tensor;
  } else {
    const SynthSpec s = parse_synth(f.synth);
    GenSpec g;
    g.dims = s.dims;
    g.nnz = s.nnz;
    g.seed = s.seed;
    t = gen_preferential(g);
    source = "synthetic preferential " + f.synth;
  }
  const FlattenedViews views(t);
  const FactorModel m = random_model(t.dims(), f.rank, f.seed);
  using Clock = std::chrono::steady_clock;

  std::vector<BenchRow> rows;
  bool flop_mismatch = false;
  bool any_ran = false;
  for (int mode = 1; mode <= 3; ++mode) {
    const auto [first, second] = factors_for_mode(mode, m.A, m.B, m.C);
    MttkrpPlan plan = build_plan(views, mode);
    const Matrix reference = mttkrp_dfacto(plan, first, second);

    for (const auto& k : kernels) {
      BenchRow row{mode, k, "ok"};
      if (k == "dfacto") {
        row.expected = expected_flops_dfacto(views, mode, f.rank);
      } else if (k == "naive") {
        row.expected = expected_flops_naive(views, mode, f.rank);
      } else {
        row.expected = expected_flops_baseline(t.nnz(), f.rank);
      }
      if (k == "naive" &&
          static_cast<unsigned __int128>(views.x(mode).ncols) * static_cast<unsigned __int128>(f.rank) > f.naive_cap) {
        row.status = "skipped (memory cap)";
        rows.push_back(row);
        continue;
      }

      std::vector<double> times;
      Matrix result(reference.rows(), reference.cols());
      for (int r = 0; r < f.repeat; ++r) {
        FlopCounter fc;
        const auto t0 = Clock::now();
        if (k == "dfacto") {
          if (f.threads > 1) {
            mttkrp_dfacto_threaded(plan, first, second, result, f.threads, &fc);
          } else {
            mttkrp_dfacto(plan, first, second, result, &fc);
          }
        } else if (k == "naive") {
          result = mttkrp_naive(views.x(mode), first, second, &fc, f.naive_cap);
        } else if (k == "toolbox") {
          result = mttkrp_toolbox(t, mode, first, second, &fc);
        } else {
          result = mttkrp_gigatensor(views.x(mode), first, second, &fc);
        }
        times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        row.flops = fc.multiply_adds;
      }
      any_ran = true;
      row.median_ms = median(times);
      row.diff = result.size() ? (result - reference).cwiseAbs().maxCoeff() : 0.0;
      if (row.flops != row.expected) {
        row.status = "FLOP MISMATCH";
        flop_mismatch = true;
      }
      rows.push_back(row);
    }
  }

  const Dims& d = t.dims();
  out << "tensor: " << source << " (" << d.i << "x" << d.j << "x" << d.k << ", nnz " << t.nnz() << ")\n"
      << "rank " << f.rank << ", repeat " << f.repeat << ", threads " << f.threads << "\n\n"
      << "| mode | kernel | median_ms | flops | expected_flops | max_abs_diff | status |\n"
      << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const bool ran = r.status.rfind("skipped", 0) != 0;
    out << "| " << r.mode << " | " << r.kernel << " | " << (ran ? fmt(r.median_ms, 4) : "-") << " | "
        << (ran ? std::to_string(r.flops) : "-") << " | " << r.expected << " | " << (ran ? fmt(r.diff, 3) : "-")
        << " | " << r.status << " |\n";
  }
  if (!f.out.empty()) {
    std::ofstream csv(f.out);
    if (!csv) throw std::runtime_error("cannot write " + f.out);
    csv << "mode,kernel,status,median_ms,flops,expected_flops,max_abs_diff,threads\n";
    csv << std::setprecision(17);
    for (const auto& r : rows) {
      csv << r.mode << ',' << r.kernel << ',' << r.status << ',' << r.median_ms << ',' << r.flops << ','
          << r.expected << ',' << r.diff << ',' << f.threads << '\n';
    }
  }
  if (!any_ran) throw NothingToRun("every requested kernel was skipped");
  if (flop_mismatch) {
    err << "error: a kernel's flop count differs from its formula\n";
    return kExitError;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenerateFlags {
  std::string synth;
  std::string model = "preferential";
  std::string values = "constant";
  Index rank = 1;
  double noise = 0.0;
  std::string out;
  int index_base = 1;
};

int cmd_generate(const GenerateFlags& f, std::ostream& out) {
  const SynthSpec s = parse_synth(f.synth);
  GenSpec g;
  g.dims = s.dims;
  g.nnz = s.nnz;
  g.seed = s.seed;
  g.values = f.values == "uniform" ? ValueDistribution::Uniform : ValueDistribution::Constant;
  g.rank = f.rank;
  g.noise = f.noise;

  SparseTensor t;
  if (f.model == "planted") {
    auto [tensor, truth] = gen_planted(g);
    t = std::move(tensor);
    write_dense_csv(f.out + ".A.csv", truth.A);
    write_dense_csv(f.out + ".B.csv", truth.B);
    write_dense_csv(f.out + ".C.csv", truth.C);
  } else {
    t = gen_preferential(g);
  }
  write_tensor_file(f.out, t, f.index_base);
  out << "wrote " << f.out << ": " << t.dims().i << "x" << t.dims().j << "x" << t.dims().k << ", nnz " << t.nnz()
      << '\n';
  for (int mode = 1; mode <= 3; ++mode) {
    const auto counts = marginal_counts(t, mode);
    out << "mode " << mode << ": max marginal " << *std::max_element(counts.begin(), counts.end()) << ", gini "
        << fmt(gini(counts), 4) << '\n';
  }
  if (f.model == "planted") out << "planted factors in " << f.out << ".{A,B,C}.csv\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct JointFlags {
  std::string ratings;
  std::string tensor;
  Index rank = 5;
  std::string algo = "als";
  int iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
  std::vector<double> mu_grid;
  std::vector<double> lambda_grid;
  bool normalize = false;
  std::vector<double> clamp;
  int index_base = 1;
  int threads = 1;
  std::string out;
};

int cmd_joint(const JointFlags& f, std::ostream& out) {
  std::vector<RatingRecord> records = read_ratings_file(f.ratings, f.index_base);
  if (f.normalize) rescale_ratings(records, 0.0, 5.0);

  Index users = 0, items = 0;
  for (const auto& r : records) {
    users = std::max(users, r.user + 1);
    items = std::max(items, r.item + 1);
  }
  SparseTensor x;
  if (!f.tensor.empty()) {
    SparseTensor raw = read_tensor_file(f.tensor, f.index_base).tensor;
    users = std::max(users, raw.dims().i);
    items = std::max(items, raw.dims().j);
    std::vector<Entry> entries(raw.entries().begin(), raw.entries().end());
    x = SparseTensor::from_entries({users, items, raw.dims().k}, std::move(entries));
  } else {
    x = SparseTensor::from_entries({users, items, 1}, {});
  }

  std::vector<double> mu_grid = f.mu_grid;
  if (mu_grid.empty()) mu_grid = f.tensor.empty() ? std::vector<double>{0.0} : default_mu_grid();
  const std::vector<double> lambda_grid = f.lambda_grid.empty() ? default_lambda_grid() : f.lambda_grid;
  for (double v : mu_grid) {
    if (!(v >= 0.0)) throw UsageError("--mu-grid values must be >= 0");
  }
  for (double v : lambda_grid) {
    if (!(v >= 0.0)) throw UsageError("--lambda-grid values must be >= 0");
  }

  const RatingSplit split = split_ratings(records, f.split_seed);
  const auto train = RatingsMatrix::from_records(users, items, split.train);
  const auto validation = RatingsMatrix::from_records(users, items, split.validation);
  const auto test = RatingsMatrix::from_records(users, items, split.test);

  JointConfig base;
  base.rank = f.rank;
  base.algorithm = f.algo == "gd" ? Algorithm::Gd : Algorithm::Als;
  base.max_iters = f.iters;
  base.tol = f.tol;
  base.seed = f.seed;
  if (!f.clamp.empty()) {
    if (f.clamp.size() != 2) throw UsageError("--clamp takes lo,hi");
    base.clamp = {true, f.clamp[0], f.clamp[1]};
  }

  const FlattenedViews views(x);
  SerialEngine engine(views, f.threads);
  const GridSearchResult grid = joint_grid_search(train, validation, test, engine, base, mu_grid, lambda_grid);

  out << "ratings: " << records.size() << " (train " << train.size() << ", validation " << validation.size()
      << ", test " << test.size() << "), users " << users << ", items " << items << ", review tensor nnz "
      << x.nnz() << "\n\n"
      << "| mu | lambda | validation_mse | test_mse |\n|---|---|---|---|\n";
  for (const auto& p : grid.points) {
    out << "| " << fmt(p.mu) << " | " << fmt(p.reg) << " | " << fmt(p.validation_mse, 8) << " | "
        << fmt(p.test_mse, 8) << " |\n";
  }
  const GridPoint& best = grid.points[grid.best];
  out << "\nselected mu=" << fmt(best.mu) << " lambda=" << fmt(best.reg) << " validation_mse="
      << fmt(best.validation_mse, 10) << " test_mse=" << fmt(best.test_mse, 10)
      << (base.clamp.enabled ? " (clamped)" : "") << '\n';
  if (!f.out.empty()) {
    std::ofstream csv(f.out);
    if (!csv) throw std::runtime_error("cannot write " + f.out);
    write_grid_csv(csv, grid);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse tensor CP factorization with the DFacTo MTTKRP kernel", "dfacto"};
  app.require_subcommand(1);

  SolverFlags fact;
  int fact_workers = 0;
  auto* factorize = app.add_subcommand("factorize", "CP-decompose a sparse tensor with ALS or GD");
  fact.add_to(factorize);
  factorize->add_option("--workers", fact_workers, "Run on this many in-process workers (0 = serial)")
      ->check(CLI::NonNegativeNumber);

  BenchFlags bench;
  auto* benchmark = app.add_subcommand("benchmark", "Compare MTTKRP kernels on one tensor");
  benchmark->add_option("--tensor", bench.tensor, "Tensor text file")->check(CLI::ExistingFile);
  benchmark->add_option("--synth", bench.synth, "I,J,K,nnz,seed for a preferential-attachment tensor");
  benchmark->add_option("--rank", bench.rank, "Factor columns")->check(CLI::PositiveNumber);
  benchmark->add_option("--kernels", bench.kernels, "Comma list of dfacto,naive,toolbox,gigatensor")
      ->delimiter(',')
      ->expected(0, -1);
  benchmark->add_option("--repeat", bench.repeat, "Timed runs per kernel")->check(CLI::PositiveNumber);
  benchmark->add_option("--threads", bench.threads, "Threads for the dfacto kernel")->check(CLI::PositiveNumber);
  benchmark->add_option("--seed", bench.seed, "Seed for the random factors");
  benchmark->add_option("--index-base", bench.index_base, "0 or 1")->check(CLI::IsMember({0, 1}));
  benchmark->add_option("--out", bench.out, "Also write the table as CSV");
  benchmark->add_option("--naive-cap", bench.naive_cap, "Largest Khatri-Rao product (values) the naive kernel may build");

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic tensor");
  generate->add_option("--synth", gen.synth, "I,J,K,nnz,seed")->required();
  generate->add_option("--model", gen.model, "preferential or planted")
      ->check(CLI::IsMember({"preferential", "planted"}));
  generate->add_option("--values", gen.values, "constant or uniform (preferential)")
      ->check(CLI::IsMember({"constant", "uniform"}));
  generate->add_option("--rank", gen.rank, "Planted rank")->check(CLI::PositiveNumber);
  generate->add_option("--noise", gen.noise, "Planted Gaussian noise sigma")->check(CLI::NonNegativeNumber);
  generate->add_option("--out", gen.out, "Output tensor path")->required();
  generate->add_option("--index-base", gen.index_base, "0 or 1")->check(CLI::IsMember({0, 1}));

  JointFlags jf;
  auto* joint = app.add_subcommand("joint", "Joint ratings + review tensor model with grid search");
  joint->add_option("--ratings", jf.ratings, "Ratings file: user item rating [has_review]")
      ->required()
      ->check(CLI::ExistingFile);
  joint->add_option("--tensor", jf.tensor, "Review tensor (users x items x words)")->check(CLI::ExistingFile);
  joint->add_option("--rank", jf.rank, "Shared rank")->check(CLI::PositiveNumber);
  joint->add_option("--algo", jf.algo, "als or gd")->check(CLI::IsMember({"als", "gd"}));
  joint->add_option("--iters", jf.iters, "Maximum iterations per fit")->check(CLI::NonNegativeNumber);
  joint->add_option("--tol", jf.tol, "Relative objective change that stops a fit")->check(CLI::PositiveNumber);
  joint->add_option("--seed", jf.seed, "Initialization seed");
  joint->add_option("--split-seed", jf.split_seed, "Seed of the 60/20/20 split");
  joint->add_option("--mu-grid", jf.mu_grid, "Comma list of tensor weights")->delimiter(',');
  joint->add_option("--lambda-grid", jf.lambda_grid, "Comma list of ridge weights")->delimiter(',');
  joint->add_flag("--normalize-ratings", jf.normalize, "Rescale ratings linearly onto [0, 5]");
  joint->add_option("--clamp", jf.clamp, "lo,hi: clamp predictions before the MSE")->delimiter(',');
  joint->add_option("--index-base", jf.index_base, "0 or 1")->check(CLI::IsMember({0, 1}));
  joint->add_option("--threads", jf.threads, "Kernel threads")->check(CLI::PositiveNumber);
  joint->add_option("--out", jf.out, "Report CSV: mu,lambda,validation_mse,test_mse");

  SolverFlags mf;
  std::vector<std::string> worker_addrs;
  auto* master = app.add_subcommand("master", "Drive remote workers over TCP");
  mf.add_to(master);
  master->add_option("--workers", worker_addrs, "host:port,...")->required()->delimiter(',');

  std::string listen;
  std::string port_file;
  int worker_threads = 1;
  auto* worker = app.add_subcommand("worker", "Serve one master over TCP");
  worker->add_option("--listen", listen, "host:port (port 0 picks one)")->required();
  worker->add_option("--port-file", port_file, "Write the bound port here once listening");
  worker->add_option("--threads", worker_threads, "Kernel threads")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*factorize) return cmd_factorize(fact, fact_workers, out, err);
    if (*benchmark) return cmd_benchmark(bench, out, err);
    if (*generate) return cmd_generate(gen, out);
    if (*joint) return cmd_joint(jf, out);
    if (*master) return cmd_master(mf, worker_addrs, out, err);
    if (*worker) return cmd_worker(listen, port_file, worker_threads, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NothingToRun& e) {
    err << "nothing to run: " << e.what() << '\n';
    return kExitNothingToRun;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace dfacto::cli
