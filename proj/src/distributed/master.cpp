#include "dfacto/distributed/master.hpp"

#include <exception>
#include <thread>

#include "dfacto/errors.hpp"

namespace dfacto {

DistributedEngine::DistributedEngine(const FlattenedViews& views, std::vector<std::unique_ptr<Channel>> channels)
    : dims_(views.dims()), norm_x_sq_(views.norm_squared()), channels_(std::move(channels)) {
  if (channels_.empty()) throw std::invalid_argument("distributed engine needs at least one worker");
  partitions_ = partition_rows(views, workers());
  std::array<MttkrpPlan, 3> full{build_plan(views, 1), build_plan(views, 2), build_plan(views, 3)};
  for (int w = 0; w < workers(); ++w) {
    ShardAssignment a;
    a.worker_id = w;
    a.workers = workers();
    a.dims = dims_;
    for (int n = 0; n < 3; ++n) {
      const RowRange r = partitions_[w].rows[n];
      a.shards[n] = full[n].shard(r.begin, r.end).pattern();
    }
    channels_[w]->send(make_shard_assign(a));
  }
}

DistributedEngine::~DistributedEngine() {
  try {
    shutdown();
  } catch (...) {
  }
}

void DistributedEngine::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  for (auto& ch : channels_) {
    try {
      ch->send(make_simple(MessageKind::Shutdown, iteration_));
    } catch (const TransportError&) {
    }
  }
}

void DistributedEngine::broadcast(const Message& m) {
  for (auto& ch : channels_) ch->send(m);
}

Message DistributedEngine::expect_from(int worker, MessageKind kind) {
  Message m;
  try {
    m = channels_[worker]->recv();
  } catch (const TransportError& e) {
    throw TransportError("worker " + std::to_string(worker) + " disconnected: " + e.what());
  }
  if (m.kind == MessageKind::ResyncRequest) {
    throw ProtocolError("worker " + std::to_string(worker) + " requested a resync at iteration " +
                        std::to_string(m.iteration) + " (master at " + std::to_string(iteration_) + ")");
  }
  if (m.kind != kind) {
    throw ProtocolError("worker " + std::to_string(worker) + " sent " + kind_name(m.kind) + ", expected " +
                        kind_name(kind));
  }
  if (m.iteration != iteration_) {
    throw ProtocolError("worker " + std::to_string(worker) + " answered for iteration " +
                        std::to_string(m.iteration) + ", master at " + std::to_string(iteration_));
  }
  return m;
}

void DistributedEngine::begin_iteration(int iteration, const FactorModel& m) {
  iteration_ = static_cast<std::uint32_t>(iteration);
  if (shard_counts_.size() <= iteration_) shard_counts_.resize(iteration_ + 1, 0);
  broadcast(make_factor_broadcast(iteration_, FactorSet{m.A, m.B, m.C, m.weights}));
}

Matrix DistributedEngine::mttkrp(int mode, const FactorModel& m, FlopCounter& flops) {
  broadcast(make_simple(MessageKind::ComputeRequest, iteration_, mode));
  Matrix N(dims_[mode], m.rank());
  for (int w = 0; w < workers(); ++w) {
    const Message msg = expect_from(w, MessageKind::ShardResult);
    if (msg.mode != static_cast<std::uint32_t>(mode)) throw ProtocolError("shard result for the wrong mode");
    ShardResultData r = read_shard_result(msg);
    if (r.rows != partitions_[w].rows[mode - 1] || r.values.cols() != m.rank()) {
      throw ProtocolError("shard result from worker " + std::to_string(w) + " does not match its partition");
    }
    N.middleRows(r.rows.begin, r.rows.size()) = r.values;
    flops.multiply_adds += r.flops;
    ++shard_counts_[iteration_];
  }
  return N;
}

void DistributedEngine::factor_updated(int mode, const FactorModel& m) {
  broadcast(make_factor_update(iteration_, mode, m.factor(mode), m.weights));
}

double DistributedEngine::gather_partials(std::uint32_t trial) {
  double s = 0.0;
  for (int w = 0; w < workers(); ++w) {
    std::uint32_t got = 0;
    double value = 0.0;
    read_partial_objective(expect_from(w, MessageKind::PartialObjective), got, value);
    if (got != trial) throw ProtocolError("partial objective for the wrong trial");
    s += value;
  }
  return s;
}

double DistributedEngine::inner_product(const FactorModel&) {
  broadcast(make_simple(MessageKind::ObjectiveRequest, iteration_));
  return gather_partials(0);
}

void DistributedEngine::set_search_direction(const Gradients& g) {
  trial_ = 0;
  broadcast(make_gradient_broadcast(iteration_, g.dA, g.dB, g.dC));
}

double DistributedEngine::trial_inner_product(const FactorModel&, double alpha) {
  ++trial_;
  broadcast(make_trial_step(iteration_, trial_, alpha));
  return gather_partials(trial_);
}

void DistributedEngine::step_accepted(double alpha) { broadcast(make_step_size(iteration_, alpha)); }

SolveResult master_run(const SparseTensor& t, const SolverConfig& config,
                       std::vector<std::unique_ptr<Channel>> workers) {
  config.validate();
  const FlattenedViews views(t);
  DistributedEngine engine(views, std::move(workers));
  SolveResult res = solve_with_engine(engine, config, random_model(t.dims(), config.rank, config.seed));
  engine.shutdown();
  return res;
}

SolveResult solve_distributed_inproc(const SparseTensor& t, const SolverConfig& config, int workers,
                                     std::vector<WorkerReport>* reports) {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  std::vector<std::unique_ptr<Channel>> master_ends;
  std::vector<std::unique_ptr<Channel>> worker_ends;
  for (int w = 0; w < workers; ++w) {
    auto [m, wk] = make_inproc_pair();
    master_ends.push_back(std::move(m));
    worker_ends.push_back(std::move(wk));
  }

  std::vector<WorkerReport> local(workers);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        local[w] = run_worker(*worker_ends[w], config.threads);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }

  SolveResult res;
  std::exception_ptr master_error;
  try {
    res = master_run(t, config, std::move(master_ends));
  } catch (...) {
    master_error = std::current_exception();
  }
  // master_run closed its channels on the way out, so the workers have returned or failed.
  for (auto& th : threads) th.join();
  if (master_error) std::rethrow_exception(master_error);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (reports) *reports = std::move(local);
  return res;
}

}  // namespace dfacto
