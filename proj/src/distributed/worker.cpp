#include "dfacto/distributed/worker.hpp"

#include <array>
#include <memory>
#include <optional>

#include "dfacto/cp_solver.hpp"
#include "dfacto/errors.hpp"

namespace dfacto {

namespace {

class WorkerState {
 public:
  WorkerState(Channel& ch, int threads) : ch_(ch), threads_(threads) {}

  WorkerReport run() {
    Message first = ch_.recv();
    ++report_.messages;
    const ShardAssignment a = read_shard_assign(first);
    report_.worker_id = a.worker_id;
    for (int n = 0; n < 3; ++n) plans_[n] = MttkrpPlan(std::make_shared<PlanPattern>(a.shards[n]));

    for (;;) {
      Message m = ch_.recv();
      ++report_.messages;
      if (m.kind == MessageKind::Shutdown) return report_;
      if (m.kind == MessageKind::FactorBroadcast) {
        const FactorSet f = read_factor_broadcast(m);
        model_ = FactorModel{f.A, f.B, f.C, f.weights};
        iteration_ = m.iteration;
        have_model_ = true;
        continue;
      }
      if (!have_model_ || m.iteration != iteration_) {
        ++report_.resync_requests;
        ch_.send(make_simple(MessageKind::ResyncRequest, iteration_));
        continue;
      }
      handle(m);
    }
  }

 private:
  void handle(const Message& m) {
    switch (m.kind) {
      case MessageKind::FactorUpdate: {
        const int mode = checked_mode(m);
        Matrix factor;
        Vector weights;
        read_factor_update(m, factor, weights);
        if (factor.rows() != model_.factor(mode).rows() || factor.cols() != model_.rank() ||
            weights.size() != model_.rank()) {
          throw ProtocolError("factor update: shape mismatch");
        }
        model_.factor(mode) = std::move(factor);
        model_.weights = std::move(weights);
        break;
      }
      case MessageKind::ComputeRequest: {
        const int mode = checked_mode(m);
        MttkrpPlan& plan = plans_[mode - 1];
        const auto [first, second] = factors_for_mode(mode, model_.A, model_.B, model_.C);
        ShardResultData r;
        r.rows = {plan.row_offset(), plan.row_offset() + plan.out_rows()};
        r.values.resize(plan.out_rows(), model_.rank());
        FlopCounter flops;
        if (threads_ > 1) {
          mttkrp_dfacto_threaded(plan, first, second, r.values, threads_, &flops);
        } else {
          mttkrp_dfacto(plan, first, second, r.values, &flops);
        }
        r.flops = flops.multiply_adds;
        ++report_.shard_results;
        ch_.send(make_shard_result(iteration_, mode, r));
        break;
      }
      case MessageKind::ObjectiveRequest:
        ch_.send(make_partial_objective(iteration_, 0, partial_inner(model_)));
        break;
      case MessageKind::GradientBroadcast: {
        Gradients g;
        read_gradient_broadcast(m, g.dA, g.dB, g.dC);
        if (g.dA.rows() != model_.A.rows() || g.dB.rows() != model_.B.rows() || g.dC.rows() != model_.C.rows()) {
          throw ProtocolError("gradient broadcast: shape mismatch");
        }
        direction_ = std::move(g);
        break;
      }
      case MessageKind::TrialStep: {
        std::uint32_t trial = 0;
        double alpha = 0.0;
        read_trial_step(m, trial, alpha);
        if (!direction_) throw ProtocolError("trial step before a search direction");
        ch_.send(make_partial_objective(iteration_, trial, partial_inner(step_model(model_, *direction_, alpha))));
        break;
      }
      case MessageKind::StepSize: {
        const double alpha = read_step_size(m);
        if (!direction_) throw ProtocolError("step size before a search direction");
        if (alpha != 0.0) model_ = step_model(model_, *direction_, alpha);
        direction_.reset();
        break;
      }
      default:
        throw ProtocolError(std::string("worker cannot handle ") + kind_name(m.kind));
    }
  }

  static int checked_mode(const Message& m) {
    if (m.mode < 1 || m.mode > 3) throw ProtocolError("message mode out of range");
    return static_cast<int>(m.mode);
  }

  double partial_inner(const FactorModel& m) const {
    return plan_inner_product(plans_[0], m.weighted_A(), m.B, m.C);
  }

  Channel& ch_;
  int threads_;
  std::array<MttkrpPlan, 3> plans_;
  FactorModel model_;
  bool have_model_ = false;
  std::uint32_t iteration_ = 0;
  std::optional<Gradients> direction_;
  WorkerReport report_;
};

}  // namespace

WorkerReport run_worker(Channel& ch, int threads) { return WorkerState(ch, threads).run(); }

}  // namespace dfacto
