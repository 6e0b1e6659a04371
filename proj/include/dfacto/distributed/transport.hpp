#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "dfacto/distributed/message.hpp"

namespace dfacto {

/// Ordered, reliable duplex message channel. Both bindings carry encoded
/// frames, so the wire codec is exercised either way.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const Message& m) = 0;
  /// Blocks until a message arrives. Throws TransportError once the peer is
  /// gone and nothing is left to read.
  virtual Message recv() = 0;
  /// Idempotent; the peer's recv fails after draining.
  virtual void close() = 0;
};

/// Two connected in-process endpoints.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair();

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port". Throws std::invalid_argument on a malformed string.
Endpoint parse_endpoint(const std::string& s);

class TcpListener {
 public:
  /// Binds and listens; port 0 picks a free port.
  explicit TcpListener(const Endpoint& at);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<Channel> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects, retrying until `timeout` elapses.
std::unique_ptr<Channel> tcp_connect(const Endpoint& to,
                                     std::chrono::milliseconds timeout = std::chrono::seconds(10));

}  // namespace dfacto
