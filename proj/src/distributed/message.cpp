#include "dfacto/distributed/message.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include "dfacto/errors.hpp"

namespace dfacto {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'F', 'T', 'O'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

bool known_kind(std::uint16_t k) { return k >= 1 && k <= 12; }

void expect_kind(const Message& m, MessageKind k) {
  if (m.kind != k) {
    throw ProtocolError(std::string("expected ") + kind_name(k) + ", got " + kind_name(m.kind));
  }
}

std::uint32_t checked_u32(std::uint64_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw ProtocolError(std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

void write_pattern(PayloadWriter& w, const PlanPattern& p) {
  w.u32(static_cast<std::uint32_t>(p.mode));
  w.u64(static_cast<std::uint64_t>(p.out_rows));
  w.u64(static_cast<std::uint64_t>(p.first_dim));
  w.u64(static_cast<std::uint64_t>(p.second_dim));
  w.u64(static_cast<std::uint64_t>(p.row_offset));
  w.u64(static_cast<std::uint64_t>(p.xhat_t.nrows));
  w.u64(static_cast<std::uint64_t>(p.xhat_t.ncols));
  w.index_vector(p.xhat_t.rowptr);
  w.index_vector(p.xhat_t.columns);
  w.double_vector(p.xhat_t.values);
  w.index_vector(p.m_rowptr);
  w.index_vector(p.m_columns);
}

PlanPattern read_pattern(PayloadReader& r) {
  PlanPattern p;
  p.mode = static_cast<int>(r.u32());
  p.out_rows = static_cast<Index>(r.u64());
  p.first_dim = static_cast<Index>(r.u64());
  p.second_dim = static_cast<Index>(r.u64());
  p.row_offset = static_cast<Index>(r.u64());
  p.xhat_t.nrows = static_cast<Index>(r.u64());
  p.xhat_t.ncols = static_cast<Index>(r.u64());
  p.xhat_t.rowptr = r.index_vector();
  p.xhat_t.columns = r.index_vector();
  p.xhat_t.values = r.double_vector();
  p.m_rowptr = r.index_vector();
  p.m_columns = r.index_vector();
  try {
    p.xhat_t.validate();
  } catch (const std::logic_error& e) {
    throw ProtocolError(std::string("shard pattern: ") + e.what());
  }
  if (p.mode < 1 || p.mode > 3 || p.m_rowptr.size() != static_cast<std::size_t>(p.out_rows) + 1 ||
      p.m_columns.size() != static_cast<std::size_t>(p.xhat_t.nrows) ||
      (p.out_rows > 0 && p.m_rowptr.back() != p.xhat_t.nrows)) {
    throw ProtocolError("shard pattern: inconsistent M pattern");
  }
  for (Index c : p.m_columns) {
    if (c < 0 || c >= p.second_dim) throw ProtocolError("shard pattern: M column out of range");
  }
  if (p.xhat_t.ncols != p.first_dim) throw ProtocolError("shard pattern: transpose width != first_dim");
  return p;
}

Message with_body(MessageKind kind, std::uint32_t iteration, int mode, PayloadWriter& w) {
  Message m;
  m.kind = kind;
  m.iteration = iteration;
  m.mode = static_cast<std::uint32_t>(mode);
  m.body = w.take();
  return m;
}

}  // namespace

const char* kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::ShardAssign: return "ShardAssign";
    case MessageKind::FactorBroadcast: return "FactorBroadcast";
    case MessageKind::FactorUpdate: return "FactorUpdate";
    case MessageKind::ComputeRequest: return "ComputeRequest";
    case MessageKind::ShardResult: return "ShardResult";
    case MessageKind::GradientBroadcast: return "GradientBroadcast";
    case MessageKind::TrialStep: return "TrialStep";
    case MessageKind::PartialObjective: return "PartialObjective";
    case MessageKind::StepSize: return "StepSize";
    case MessageKind::Shutdown: return "Shutdown";
    case MessageKind::ResyncRequest: return "ResyncRequest";
    case MessageKind::ObjectiveRequest: return "ObjectiveRequest";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode(const Message& m) {
  const std::uint64_t payload = 4 + m.body.size();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le(out, kWireVersion, 2);
  put_le(out, static_cast<std::uint16_t>(m.kind), 2);
  put_le(out, m.iteration, 4);
  put_le(out, checked_u32(payload, "payload length"), 4);
  put_le(out, m.mode, 4);
  out.insert(out.end(), m.body.begin(), m.body.end());
  return out;
}

std::uint32_t decode_header(std::span<const std::uint8_t> header, Message& out) {
  if (header.size() < kHeaderSize) throw ProtocolError("truncated header");
  if (std::memcmp(header.data(), kMagic, 4) != 0) throw ProtocolError("bad magic");
  const auto version = static_cast<std::uint16_t>(get_le(header.data() + 4, 2));
  if (version != kWireVersion) throw ProtocolError("unsupported wire version " + std::to_string(version));
  const auto kind = static_cast<std::uint16_t>(get_le(header.data() + 6, 2));
  if (!known_kind(kind)) throw ProtocolError("unknown message kind " + std::to_string(kind));
  out.kind = static_cast<MessageKind>(kind);
  out.iteration = static_cast<std::uint32_t>(get_le(header.data() + 8, 4));
  const auto len = static_cast<std::uint32_t>(get_le(header.data() + 12, 4));
  if (len < 4) throw ProtocolError("payload shorter than the mode field");
  return len;
}

Message decode(std::span<const std::uint8_t> frame) {
  Message m;
  const std::uint32_t len = decode_header(frame, m);
  if (frame.size() != kHeaderSize + len) throw ProtocolError("frame length does not match header");
  m.mode = static_cast<std::uint32_t>(get_le(frame.data() + kHeaderSize, 4));
  m.body.assign(frame.begin() + kHeaderSize + 4, frame.end());
  return m;
}

// ---------------------------------------------------------------------------

void PayloadWriter::u32(std::uint32_t v) { put_le(bytes_, v, 4); }
void PayloadWriter::u64(std::uint64_t v) { put_le(bytes_, v, 8); }
void PayloadWriter::f64(double v) { put_le(bytes_, std::bit_cast<std::uint64_t>(v), 8); }

void PayloadWriter::range(const RowRange& r) {
  u64(static_cast<std::uint64_t>(r.begin));
  u64(static_cast<std::uint64_t>(r.end));
}

void PayloadWriter::matrix(const Matrix& m) {
  u32(checked_u32(static_cast<std::uint64_t>(m.rows()), "matrix rows"));
  u32(checked_u32(static_cast<std::uint64_t>(m.cols()), "matrix cols"));
  bytes_.reserve(bytes_.size() + static_cast<std::size_t>(m.size()) * 8);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
}

void PayloadWriter::index_vector(std::span<const Index> v) {
  u64(v.size());
  bytes_.reserve(bytes_.size() + v.size() * 8);
  for (Index x : v) u64(static_cast<std::uint64_t>(x));
}

void PayloadWriter::double_vector(std::span<const double> v) {
  u64(v.size());
  bytes_.reserve(bytes_.size() + v.size() * 8);
  for (double x : v) f64(x);
}

std::span<const std::uint8_t> PayloadReader::take(std::size_t n) {
  if (n > bytes_.size() - pos_) throw ProtocolError("payload truncated");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t PayloadReader::u32() { return static_cast<std::uint32_t>(get_le(take(4).data(), 4)); }
std::uint64_t PayloadReader::u64() { return get_le(take(8).data(), 8); }
double PayloadReader::f64() { return std::bit_cast<double>(u64()); }

RowRange PayloadReader::range() {
  RowRange r;
  r.begin = static_cast<Index>(u64());
  r.end = static_cast<Index>(u64());
  return r;
}

Matrix PayloadReader::matrix() {
  const std::uint32_t rows = u32();
  const std::uint32_t cols = u32();
  if (static_cast<std::uint64_t>(rows) * cols * 8 > bytes_.size() - pos_) throw ProtocolError("payload truncated");
  Matrix m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = f64();
  return m;
}

std::vector<Index> PayloadReader::index_vector() {
  const std::uint64_t n = u64();
  if (n > (bytes_.size() - pos_) / 8) throw ProtocolError("payload truncated");
  std::vector<Index> v(n);
  for (auto& x : v) x = static_cast<Index>(u64());
  return v;
}

std::vector<double> PayloadReader::double_vector() {
  const std::uint64_t n = u64();
  if (n > (bytes_.size() - pos_) / 8) throw ProtocolError("payload truncated");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

void PayloadReader::finish() const {
  if (pos_ != bytes_.size()) throw ProtocolError("trailing bytes in payload");
}

// ---------------------------------------------------------------------------

Message make_shard_assign(const ShardAssignment& a) {
  PayloadWriter w;
  w.u32(static_cast<std::uint32_t>(a.worker_id));
  w.u32(static_cast<std::uint32_t>(a.workers));
  w.u64(static_cast<std::uint64_t>(a.dims.i));
  w.u64(static_cast<std::uint64_t>(a.dims.j));
  w.u64(static_cast<std::uint64_t>(a.dims.k));
  for (const auto& p : a.shards) write_pattern(w, p);
  return with_body(MessageKind::ShardAssign, 0, 0, w);
}

ShardAssignment read_shard_assign(const Message& m) {
  expect_kind(m, MessageKind::ShardAssign);
  PayloadReader r(m.body);
  ShardAssignment a;
  a.worker_id = static_cast<int>(r.u32());
  a.workers = static_cast<int>(r.u32());
  a.dims.i = static_cast<Index>(r.u64());
  a.dims.j = static_cast<Index>(r.u64());
  a.dims.k = static_cast<Index>(r.u64());
  for (int n = 0; n < 3; ++n) {
    a.shards[n] = read_pattern(r);
    if (a.shards[n].mode != n + 1) throw ProtocolError("shard patterns out of mode order");
  }
  r.finish();
  return a;
}

Message make_factor_broadcast(std::uint32_t iteration, const FactorSet& f) {
  PayloadWriter w;
  w.matrix(f.A);
  w.matrix(f.B);
  w.matrix(f.C);
  w.double_vector({f.weights.data(), static_cast<std::size_t>(f.weights.size())});
  return with_body(MessageKind::FactorBroadcast, iteration, 0, w);
}

FactorSet read_factor_broadcast(const Message& m) {
  expect_kind(m, MessageKind::FactorBroadcast);
  PayloadReader r(m.body);
  FactorSet f;
  f.A = r.matrix();
  f.B = r.matrix();
  f.C = r.matrix();
  const auto w = r.double_vector();
  f.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  r.finish();
  if (f.B.cols() != f.A.cols() || f.C.cols() != f.A.cols() || f.weights.size() != f.A.cols()) {
    throw ProtocolError("factor broadcast: rank mismatch");
  }
  return f;
}

Message make_factor_update(std::uint32_t iteration, int mode, const Matrix& factor, const Vector& weights) {
  PayloadWriter w;
  w.matrix(factor);
  w.double_vector({weights.data(), static_cast<std::size_t>(weights.size())});
  return with_body(MessageKind::FactorUpdate, iteration, mode, w);
}

void read_factor_update(const Message& m, Matrix& factor, Vector& weights) {
  expect_kind(m, MessageKind::FactorUpdate);
  PayloadReader r(m.body);
  factor = r.matrix();
  const auto w = r.double_vector();
  weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  r.finish();
}

Message make_shard_result(std::uint32_t iteration, int mode, const ShardResultData& d) {
  PayloadWriter w;
  w.range(d.rows);
  w.u64(d.flops);
  w.matrix(d.values);
  return with_body(MessageKind::ShardResult, iteration, mode, w);
}

ShardResultData read_shard_result(const Message& m) {
  expect_kind(m, MessageKind::ShardResult);
  PayloadReader r(m.body);
  ShardResultData d;
  d.rows = r.range();
  d.flops = r.u64();
  d.values = r.matrix();
  r.finish();
  if (d.values.rows() != d.rows.size()) throw ProtocolError("shard result: row count does not match range");
  return d;
}

Message make_gradient_broadcast(std::uint32_t iteration, const Matrix& dA, const Matrix& dB, const Matrix& dC) {
  PayloadWriter w;
  w.matrix(dA);
  w.matrix(dB);
  w.matrix(dC);
  return with_body(MessageKind::GradientBroadcast, iteration, 0, w);
}

void read_gradient_broadcast(const Message& m, Matrix& dA, Matrix& dB, Matrix& dC) {
  expect_kind(m, MessageKind::GradientBroadcast);
  PayloadReader r(m.body);
  dA = r.matrix();
  dB = r.matrix();
  dC = r.matrix();
  r.finish();
}

Message make_trial_step(std::uint32_t iteration, std::uint32_t trial, double alpha) {
  PayloadWriter w;
  w.u32(trial);
  w.f64(alpha);
  return with_body(MessageKind::TrialStep, iteration, 0, w);
}

void read_trial_step(const Message& m, std::uint32_t& trial, double& alpha) {
  expect_kind(m, MessageKind::TrialStep);
  PayloadReader r(m.body);
  trial = r.u32();
  alpha = r.f64();
  r.finish();
}

Message make_partial_objective(std::uint32_t iteration, std::uint32_t trial, double value) {
  PayloadWriter w;
  w.u32(trial);
  w.f64(value);
  return with_body(MessageKind::PartialObjective, iteration, 0, w);
}

void read_partial_objective(const Message& m, std::uint32_t& trial, double& value) {
  expect_kind(m, MessageKind::PartialObjective);
  PayloadReader r(m.body);
  trial = r.u32();
  value = r.f64();
  r.finish();
}

Message make_step_size(std::uint32_t iteration, double alpha) {
  PayloadWriter w;
  w.f64(alpha);
  return with_body(MessageKind::StepSize, iteration, 0, w);
}

double read_step_size(const Message& m) {
  expect_kind(m, MessageKind::StepSize);
  PayloadReader r(m.body);
  const double a = r.f64();
  r.finish();
  return a;
}

Message make_simple(MessageKind kind, std::uint32_t iteration, int mode) {
  Message m;
  m.kind = kind;
  m.iteration = iteration;
  m.mode = static_cast<std::uint32_t>(mode);
  return m;
}

}  // namespace dfacto
