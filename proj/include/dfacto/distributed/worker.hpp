#pragma once

#include <cstdint>

#include "dfacto/distributed/transport.hpp"

namespace dfacto {

struct WorkerReport {
  int worker_id = -1;
  std::uint64_t messages = 0;
  std::uint64_t shard_results = 0;
  std::uint64_t resync_requests = 0;
};

/// Serves one master over `ch` until Shutdown. The first message must be a
/// ShardAssign. A message whose iteration tag differs from the last
/// FactorBroadcast is dropped and answered with a ResyncRequest. Throws
/// TransportError when the master disappears and ProtocolError on a
/// malformed message.
WorkerReport run_worker(Channel& ch, int threads = 1);

}  // namespace dfacto
