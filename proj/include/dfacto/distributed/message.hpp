#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfacto/dense_ops.hpp"
#include "dfacto/distributed/partition.hpp"
#include "dfacto/mttkrp.hpp"

namespace dfacto {

// Frame layout, little-endian:
//   0  magic "DFTO"
//   4  u16 version
//   6  u16 kind
//   8  u32 iteration
//  12  u32 payload length
//  16  payload; every payload starts with a u32 mode (0 when not applicable)
// Dense matrices are u32 rows, u32 cols, then row-major f64. Row ranges are
// two u64.

inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;

enum class MessageKind : std::uint16_t {
  ShardAssign = 1,       // master -> worker: plan shards for all three modes
  FactorBroadcast = 2,   // master -> worker: A, B, C, weights; starts an iteration
  FactorUpdate = 3,      // master -> worker: new factor for `mode` and the weights
  ComputeRequest = 4,    // master -> worker: compute the owned rows of N for `mode`
  ShardResult = 5,       // worker -> master: row range, flop count, rows of N
  GradientBroadcast = 6, // master -> worker: search direction dA, dB, dC
  TrialStep = 7,         // master -> worker: partial <X, X̂> at current - alpha * direction
  PartialObjective = 8,  // worker -> master: trial index, partial <X, X̂>
  StepSize = 9,          // master -> worker: accepted alpha (0 when stalled)
  Shutdown = 10,
  ResyncRequest = 11,    // worker -> master: a message carried a stale iteration tag
  ObjectiveRequest = 12, // master -> worker: partial <X, X̂> at the current model
};

const char* kind_name(MessageKind kind);

struct Message {
  MessageKind kind = MessageKind::Shutdown;
  std::uint32_t iteration = 0;
  std::uint32_t mode = 0;
  std::vector<std::uint8_t> body;  // payload after the mode field
};

/// Full frame: header, mode, body.
std::vector<std::uint8_t> encode(const Message& m);

/// Parses the 16-byte header; returns the payload length. Throws
/// ProtocolError on a bad magic, version or kind.
std::uint32_t decode_header(std::span<const std::uint8_t> header, Message& out);

/// Inverse of encode. Throws ProtocolError on truncation or trailing bytes.
Message decode(std::span<const std::uint8_t> frame);

class PayloadWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void range(const RowRange& r);
  void matrix(const Matrix& m);
  void index_vector(std::span<const Index> v);
  void double_vector(std::span<const double> v);

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class PayloadReader {
 public:
  explicit PayloadReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  RowRange range();
  Matrix matrix();
  std::vector<Index> index_vector();
  std::vector<double> double_vector();

  /// Throws ProtocolError unless every byte was consumed.
  void finish() const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Typed payloads.

struct ShardAssignment {
  int worker_id = 0;
  int workers = 1;
  Dims dims;
  std::array<PlanPattern, 3> shards;
};

Message make_shard_assign(const ShardAssignment& a);
ShardAssignment read_shard_assign(const Message& m);

struct FactorSet {
  Matrix A, B, C;
  Vector weights;
};

Message make_factor_broadcast(std::uint32_t iteration, const FactorSet& f);
FactorSet read_factor_broadcast(const Message& m);

Message make_factor_update(std::uint32_t iteration, int mode, const Matrix& factor, const Vector& weights);
void read_factor_update(const Message& m, Matrix& factor, Vector& weights);

struct ShardResultData {
  RowRange rows;
  std::uint64_t flops = 0;
  Matrix values;
};

Message make_shard_result(std::uint32_t iteration, int mode, const ShardResultData& r);
ShardResultData read_shard_result(const Message& m);

Message make_gradient_broadcast(std::uint32_t iteration, const Matrix& dA, const Matrix& dB, const Matrix& dC);
void read_gradient_broadcast(const Message& m, Matrix& dA, Matrix& dB, Matrix& dC);

Message make_trial_step(std::uint32_t iteration, std::uint32_t trial, double alpha);
void read_trial_step(const Message& m, std::uint32_t& trial, double& alpha);

Message make_partial_objective(std::uint32_t iteration, std::uint32_t trial, double value);
void read_partial_objective(const Message& m, std::uint32_t& trial, double& value);

Message make_step_size(std::uint32_t iteration, double alpha);
double read_step_size(const Message& m);

/// Kinds with an empty body: ComputeRequest, Shutdown, ResyncRequest, ObjectiveRequest.
Message make_simple(MessageKind kind, std::uint32_t iteration, int mode = 0);

}  // namespace dfacto
