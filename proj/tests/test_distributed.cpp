#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <thread>

#include "dfacto/datagen.hpp"
#include "dfacto/distributed/master.hpp"
#include "dfacto/distributed/message.hpp"
#include "dfacto/distributed/partition.hpp"
#include "dfacto/distributed/transport.hpp"
#include "dfacto/distributed/worker.hpp"
#include "dfacto/errors.hpp"
#include "distributed_harness.hpp"
#include "oracles.hpp"
#include "properties.hpp"

using namespace dfacto;

namespace {

// In-process workers on threads, joined on destruction.
struct WorkerPool {
  std::vector<std::unique_ptr<Channel>> master_ends;
  std::vector<std::thread> threads;
  std::vector<WorkerReport> reports;

  explicit WorkerPool(int n) : reports(n) {
    for (int w = 0; w < n; ++w) {
      auto [m, wk] = make_inproc_pair();
      master_ends.push_back(std::move(m));
      threads.emplace_back([this, w, ch = std::shared_ptr<Channel>(std::move(wk))] {
        try {
          reports[w] = run_worker(*ch);
        } catch (const std::exception&) {
        }
      });
    }
  }
  ~WorkerPool() {
    for (auto& t : threads) t.join();
  }
};

SolverConfig config(Algorithm a, Index rank, int iters) {
  SolverConfig c;
  c.algorithm = a;
  c.rank = rank;
  c.max_iters = iters;
  c.tol = 1e-300;
  c.reg = a == Algorithm::Gd ? 0.05 : 0.0;
  return c;
}

}  // namespace

TEST(Wire, HeaderLayout) {
  Message m = make_step_size(0x01020304, 0.5);
  const auto bytes = encode(m);
  ASSERT_GE(bytes.size(), kHeaderSize);
  EXPECT_EQ(std::memcmp(bytes.data(), "DFTO", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], static_cast<std::uint8_t>(MessageKind::StepSize));
  EXPECT_EQ(bytes[8], 0x04);
  EXPECT_EQ(bytes[11], 0x01);
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 12, 4);
  EXPECT_EQ(len, bytes.size() - kHeaderSize);
  Message h;
  EXPECT_EQ(decode_header({bytes.data(), kHeaderSize}, h), len);
  EXPECT_EQ(h.kind, MessageKind::StepSize);
  EXPECT_EQ(h.iteration, 0x01020304u);
}

TEST(Wire, RoundTrips) {
  std::mt19937_64 rng(1);
  const FactorSet f{oracle::random_matrix(rng, 3, 2), oracle::random_matrix(rng, 4, 2),
                    oracle::random_matrix(rng, 5, 2), oracle::random_matrix(rng, 2, 1)};
  const FactorSet g = read_factor_broadcast(decode(encode(make_factor_broadcast(7, f))));
  EXPECT_EQ(g.A, f.A);
  EXPECT_EQ(g.B, f.B);
  EXPECT_EQ(g.C, f.C);
  EXPECT_EQ(g.weights, f.weights);

  Matrix fac;
  Vector w;
  const Message upd = decode(encode(make_factor_update(3, 2, f.B, f.weights)));
  EXPECT_EQ(upd.mode, 2u);
  EXPECT_EQ(upd.iteration, 3u);
  read_factor_update(upd, fac, w);
  EXPECT_EQ(fac, f.B);

  const ShardResultData sr{{4, 7}, 99, oracle::random_matrix(rng, 3, 2)};
  const ShardResultData sr2 = read_shard_result(decode(encode(make_shard_result(1, 3, sr))));
  EXPECT_EQ(sr2.rows, sr.rows);
  EXPECT_EQ(sr2.flops, 99u);
  EXPECT_EQ(sr2.values, sr.values);

  Matrix dA, dB, dC;
  read_gradient_broadcast(decode(encode(make_gradient_broadcast(2, f.A, f.B, f.C))), dA, dB, dC);
  EXPECT_EQ(dC, f.C);

  std::uint32_t trial = 0;
  double alpha = 0, value = 0;
  read_trial_step(decode(encode(make_trial_step(2, 5, 0.125))), trial, alpha);
  EXPECT_EQ(trial, 5u);
  EXPECT_EQ(alpha, 0.125);
  read_partial_objective(decode(encode(make_partial_objective(2, 6, -3.25))), trial, value);
  EXPECT_EQ(trial, 6u);
  EXPECT_EQ(value, -3.25);
  EXPECT_EQ(read_step_size(decode(encode(make_step_size(2, 0.0)))), 0.0);

  const Message s = decode(encode(make_simple(MessageKind::ComputeRequest, 9, 3)));
  EXPECT_EQ(s.kind, MessageKind::ComputeRequest);
  EXPECT_EQ(s.mode, 3u);
}

TEST(Wire, ShardAssignRoundTrip) {
  const SparseTensor t = oracle::worked_example();
  const FlattenedViews v(t);
  ShardAssignment a;
  a.worker_id = 1;
  a.workers = 2;
  a.dims = t.dims();
  for (int n = 0; n < 3; ++n) a.shards[n] = build_plan(v, n + 1).shard(0, 1).pattern();
  const ShardAssignment b = read_shard_assign(decode(encode(make_shard_assign(a))));
  EXPECT_EQ(b.worker_id, 1);
  EXPECT_EQ(b.dims, t.dims());
  for (int n = 0; n < 3; ++n) {
    EXPECT_EQ(b.shards[n].xhat_t, a.shards[n].xhat_t);
    EXPECT_EQ(b.shards[n].m_rowptr, a.shards[n].m_rowptr);
    EXPECT_EQ(b.shards[n].m_columns, a.shards[n].m_columns);
    EXPECT_EQ(b.shards[n].row_offset, a.shards[n].row_offset);
  }
}

TEST(Wire, MalformedFramesAreRejected) {
  auto bytes = encode(make_step_size(1, 1.0));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = bytes;
  bad[6] = 200;
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode(bad), ProtocolError);
  // Right kind, payload with a trailing byte.
  Message m = make_step_size(1, 1.0);
  m.body.push_back(0);
  EXPECT_THROW(read_step_size(decode(encode(m))), ProtocolError);
  // Wrong reader for the kind.
  EXPECT_THROW(read_step_size(make_simple(MessageKind::Shutdown, 0)), ProtocolError);
}

TEST(Partition, GreedyPrefixExamples) {
  const std::vector<Index> equal = {3, 3, 3, 3};
  const auto a = greedy_prefix_split(equal, 2);
  EXPECT_EQ(a[0], (RowRange{0, 2}));
  EXPECT_EQ(a[1], (RowRange{2, 4}));
  const std::vector<Index> skew = {5, 1, 1, 1, 1, 5};
  const auto b = greedy_prefix_split(skew, 2);
  EXPECT_EQ(b[0], (RowRange{0, 3}));
  EXPECT_EQ(b[1], (RowRange{3, 6}));
  const auto c = greedy_prefix_split(skew, 1);
  EXPECT_EQ(c[0], (RowRange{0, 6}));
  const std::vector<Index> two = {1, 1};
  const auto d = greedy_prefix_split(two, 4);
  ASSERT_EQ(d.size(), 4u);
  Index covered = 0;
  for (const auto& r : d) covered += r.size();
  EXPECT_EQ(covered, 2);
}

TEST(Partition, DisjointCoverAndDeterministic) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const SparseTensor t = oracle::random_tensor(rng, 12, 300);
    const FlattenedViews v(t);
    for (int w : {1, 2, 3, 5, 16}) {
      const auto parts = partition_rows(v, w);
      ASSERT_EQ(static_cast<int>(parts.size()), w);
      for (int n = 0; n < 3; ++n) {
        Index next = 0;
        Index xt_next = 0;
        for (int p = 0; p < w; ++p) {
          EXPECT_EQ(parts[p].worker_id, p);
          EXPECT_EQ(parts[p].rows[n].begin, next);
          next = parts[p].rows[n].end;
          EXPECT_EQ(parts[p].xt_rows[n].begin, xt_next);
          xt_next = parts[p].xt_rows[n].end;
        }
        EXPECT_EQ(next, t.dims()[n + 1]);
        EXPECT_EQ(xt_next, v.xt(paired_mode(n + 1)).nrows);
      }
      const auto again = partition_rows(v, w);
      for (int p = 0; p < w; ++p) EXPECT_EQ(again[p].rows, parts[p].rows);
    }
  }
}

TEST(Worker, StaleIterationGetsResync) {
  auto [master, worker] = make_inproc_pair();
  WorkerReport report;
  std::thread th([&, ch = worker.get()] { report = run_worker(*ch); });
  const SparseTensor t = oracle::worked_example();
  const FlattenedViews v(t);
  ShardAssignment a;
  a.dims = t.dims();
  for (int n = 0; n < 3; ++n) a.shards[n] = build_plan(v, n + 1).pattern();
  master->send(make_shard_assign(a));
  // No factors yet: any request is stale.
  master->send(make_simple(MessageKind::ComputeRequest, 0, 1));
  EXPECT_EQ(master->recv().kind, MessageKind::ResyncRequest);
  const FactorModel m = random_model(t.dims(), 2, 1);
  master->send(make_factor_broadcast(1, {m.A, m.B, m.C, m.weights}));
  master->send(make_simple(MessageKind::ComputeRequest, 2, 1));
  EXPECT_EQ(master->recv().kind, MessageKind::ResyncRequest);
  master->send(make_simple(MessageKind::ComputeRequest, 1, 1));
  const Message r = master->recv();
  ASSERT_EQ(r.kind, MessageKind::ShardResult);
  EXPECT_EQ(read_shard_result(r).values.rows(), 2);
  master->send(make_simple(MessageKind::Shutdown, 1));
  th.join();
  EXPECT_EQ(report.resync_requests, 2u);
  EXPECT_EQ(report.shard_results, 1u);
}

TEST(Worker, FirstMessageMustAssignShards) {
  auto [master, worker] = make_inproc_pair();
  master->send(make_simple(MessageKind::Shutdown, 0));
  EXPECT_THROW(run_worker(*worker), ProtocolError);
}

TEST(Engine, WorkedExampleTwoWorkers) {
  const SparseTensor t = oracle::worked_example();
  const FlattenedViews v(t);
  WorkerPool pool(2);
  DistributedEngine engine(v, std::move(pool.master_ends));
  FactorModel m{Matrix::Ones(2, 2), oracle::worked_B(), oracle::worked_C(), Vector::Ones(2)};
  engine.begin_iteration(1, m);
  FlopCounter flops;
  EXPECT_EQ(engine.mttkrp(1, m, flops), oracle::worked_N());
  EXPECT_EQ(engine.partitions().size(), 2u);
  engine.shutdown();
}

TEST(Engine, AssembledNMatchesSerialBitwise) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const SparseTensor t = oracle::random_tensor(rng, 12, 300);
    const FlattenedViews v(t);
    SerialEngine serial(v);
    const FactorModel m = oracle::random_factors(rng, t.dims(), 3);
    for (int w : {1, 2, 4}) {
      WorkerPool pool(w);
      DistributedEngine engine(v, std::move(pool.master_ends));
      engine.begin_iteration(1, m);
      for (int n = 1; n <= 3; ++n) {
        FlopCounter fs, fd;
        EXPECT_EQ(engine.mttkrp(n, m, fd), serial.mttkrp(n, m, fs)) << "workers " << w << " mode " << n;
        EXPECT_EQ(fd.multiply_adds, fs.multiply_adds);
      }
      EXPECT_NEAR(engine.inner_product(m), serial.inner_product(m), 1e-12 * (1 + std::abs(serial.inner_product(m))));
      engine.shutdown();
    }
  }
}

TEST(Engine, DisconnectedWorkerAborts) {
  const SparseTensor t = oracle::worked_example();
  const FlattenedViews v(t);
  auto [master, worker] = make_inproc_pair();
  worker->close();
  std::vector<std::unique_ptr<Channel>> chans;
  chans.push_back(std::move(master));
  EXPECT_THROW(
      {
        DistributedEngine engine(v, std::move(chans));
        const FactorModel m = random_model(t.dims(), 2, 1);
        engine.begin_iteration(1, m);
        FlopCounter f;
        engine.mttkrp(1, m, f);
      },
      TransportError);
}

TEST(Solve, InprocMatchesSerial) {
  std::mt19937_64 rng(4);
  const SparseTensor t = gen_preferential({{40, 50, 60}, 3000, 5, ValueDistribution::Uniform});
  for (Algorithm a : {Algorithm::Als, Algorithm::Gd}) {
    const SolverConfig c = config(a, 4, 10);
    const SolveResult serial = solve(t, c);
    for (int w : {1, 2, 4}) {
      std::vector<WorkerReport> reports;
      const SolveResult dist = solve_distributed_inproc(t, c, w, &reports);
      EXPECT_LE(props::trajectory_gap(serial, dist), 1e-10) << "workers " << w;
      if (w == 1) EXPECT_TRUE(props::identical_trajectory(serial, dist));
      ASSERT_EQ(reports.size(), static_cast<std::size_t>(w));
      for (const auto& r : reports) EXPECT_EQ(r.resync_requests, 0u);
    }
  }
}

TEST(Solve, AlsExchangesThreeShardsPerWorkerPerIteration) {
  const SparseTensor t = gen_preferential({{20, 20, 20}, 500, 2});
  const FlattenedViews v(t);
  for (int w : {1, 3}) {
    WorkerPool pool(w);
    DistributedEngine engine(v, std::move(pool.master_ends));
    solve_with_engine(engine, config(Algorithm::Als, 2, 5), random_model(t.dims(), 2, 1));
    const auto& counts = engine.shard_results_per_iteration();
    ASSERT_EQ(counts.size(), 6u);
    for (std::size_t it = 1; it < counts.size(); ++it) EXPECT_EQ(counts[it], 3u * w) << "iteration " << it;
    engine.shutdown();
  }
}

TEST(Solve, GdStepSizesMatchSerial) {
  const SparseTensor t = gen_preferential({{30, 30, 30}, 1500, 8, ValueDistribution::Uniform});
  const SolverConfig c = config(Algorithm::Gd, 3, 15);
  const SolveResult serial = solve(t, c);
  const SolveResult dist = solve_distributed_inproc(t, c, 2);
  ASSERT_EQ(serial.history.size(), dist.history.size());
  for (std::size_t i = 0; i < serial.history.size(); ++i) {
    EXPECT_EQ(serial.history[i].step, dist.history[i].step);
    EXPECT_EQ(serial.history[i].backtracks, dist.history[i].backtracks);
  }
}

TEST(Solve, TcpMatchesSerial) {
  const SparseTensor t = gen_preferential({{30, 40, 50}, 2000, 6, ValueDistribution::Uniform});
  for (Algorithm a : {Algorithm::Als, Algorithm::Gd}) {
    const SolverConfig c = config(a, 3, 6);
    const SolveResult serial = solve(t, c);
    for (int w : {1, 2}) {
      const SolveResult dist = harness::solve_over_tcp(t, c, w);
      EXPECT_LE(props::trajectory_gap(serial, dist), 1e-10) << "workers " << w;
      if (w == 1) EXPECT_TRUE(props::identical_trajectory(serial, dist));
    }
  }
}

TEST(Transport, TcpCarriesLargeFrames) {
  TcpListener listener({"127.0.0.1", 0});
  ASSERT_NE(listener.port(), 0);
  std::mt19937_64 rng(5);
  const Matrix big = oracle::random_matrix(rng, 500, 40);
  std::thread server([&] {
    auto ch = listener.accept();
    Message m = ch->recv();
    ch->send(m);
  });
  auto client = tcp_connect({"127.0.0.1", listener.port()});
  client->send(make_factor_update(4, 1, big, Vector::Ones(40)));
  Matrix back;
  Vector w;
  read_factor_update(client->recv(), back, w);
  EXPECT_EQ(back, big);
  server.join();
}

TEST(Transport, EndpointParsing) {
  const Endpoint e = parse_endpoint("localhost:9000");
  EXPECT_EQ(e.host, "localhost");
  EXPECT_EQ(e.port, 9000);
  EXPECT_THROW(parse_endpoint("nohost"), std::invalid_argument);
  EXPECT_THROW(parse_endpoint("h:99999"), std::invalid_argument);
}

TEST(Transport, InprocCloseDrainsThenFails) {
  auto [a, b] = make_inproc_pair();
  a->send(make_simple(MessageKind::Shutdown, 3));
  a->close();
  EXPECT_EQ(b->recv().iteration, 3u);
  EXPECT_THROW(b->recv(), TransportError);
  EXPECT_THROW(b->send(make_simple(MessageKind::Shutdown, 0)), TransportError);
}
