#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dfacto/cp_solver.hpp"
#include "dfacto/distributed/partition.hpp"
#include "dfacto/distributed/transport.hpp"
#include "dfacto/distributed/worker.hpp"

namespace dfacto {

/// Engine whose MTTKRP and data inner products run on workers. Factor solves,
/// Gram terms and the line search stay on the master. Shards are merged in
/// worker_id order, so N is bitwise equal to the serial kernel's.
class DistributedEngine final : public Engine {
 public:
  /// Partitions `views` and sends every worker its ShardAssign.
  DistributedEngine(const FlattenedViews& views, std::vector<std::unique_ptr<Channel>> channels);
  /// Sends Shutdown unless shutdown() already ran; errors are swallowed.
  ~DistributedEngine() override;

  const Dims& dims() const override { return dims_; }
  double norm_x_squared() const override { return norm_x_sq_; }
  void begin_iteration(int iteration, const FactorModel& m) override;
  Matrix mttkrp(int mode, const FactorModel& m, FlopCounter& flops) override;
  void factor_updated(int mode, const FactorModel& m) override;
  double inner_product(const FactorModel& m) override;
  void set_search_direction(const Gradients& g) override;
  double trial_inner_product(const FactorModel& trial, double alpha) override;
  void step_accepted(double alpha) override;

  void shutdown();

  int workers() const noexcept { return static_cast<int>(channels_.size()); }
  const std::vector<Partition>& partitions() const noexcept { return partitions_; }
  /// ShardResult messages received so far, per iteration tag.
  const std::vector<std::uint64_t>& shard_results_per_iteration() const noexcept { return shard_counts_; }

 private:
  void broadcast(const Message& m);
  Message expect_from(int worker, MessageKind kind);
  double gather_partials(std::uint32_t trial);

  Dims dims_;
  double norm_x_sq_ = 0.0;
  std::vector<std::unique_ptr<Channel>> channels_;
  std::vector<Partition> partitions_;
  std::uint32_t iteration_ = 0;
  std::uint32_t trial_ = 0;
  std::vector<std::uint64_t> shard_counts_;
  bool shut_down_ = false;
};

/// Runs the solver through a DistributedEngine over already connected workers.
SolveResult master_run(const SparseTensor& t, const SolverConfig& config,
                       std::vector<std::unique_ptr<Channel>> workers);

/// Same as master_run with `workers` worker threads on in-process channels.
SolveResult solve_distributed_inproc(const SparseTensor& t, const SolverConfig& config, int workers,
                                     std::vector<WorkerReport>* reports = nullptr);

}  // namespace dfacto
