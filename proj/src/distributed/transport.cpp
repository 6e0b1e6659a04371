#include "dfacto/distributed/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "dfacto/errors.hpp"

namespace dfacto {

namespace {

// One direction of an in-process pair.
struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> frames;
  bool closed = false;
};

class InProcChannel final : public Channel {
 public:
  InProcChannel(std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in) : out_(std::move(out)), in_(std::move(in)) {}
  ~InProcChannel() override { close(); }

  void send(const Message& m) override {
    auto frame = encode(m);
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw TransportError("in-process channel closed");
    out_->frames.push_back(std::move(frame));
    out_->cv.notify_one();
  }

  Message recv() override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportError("in-process peer closed");
    auto frame = std::move(in_->frames.front());
    in_->frames.pop_front();
    lock.unlock();
    return decode(frame);
  }

  void close() override {
    for (auto* p : {out_.get(), in_.get()}) {
      std::lock_guard lock(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
};

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void send_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void recv_all(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) throw TransportError("peer closed the connection");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("recv"));
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void send(const Message& m) override {
    if (fd_ < 0) throw TransportError("tcp channel closed");
    const auto frame = encode(m);
    send_all(fd_, frame.data(), frame.size());
  }

  Message recv() override {
    if (fd_ < 0) throw TransportError("tcp channel closed");
    std::vector<std::uint8_t> frame(kHeaderSize);
    recv_all(fd_, frame.data(), kHeaderSize);
    Message probe;
    const std::uint32_t len = decode_header(frame, probe);
    frame.resize(kHeaderSize + len);
    recv_all(fd_, frame.data() + kHeaderSize, len);
    return decode(frame);
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) freeaddrinfo(list);
  }
};

void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
  const int rc = getaddrinfo(host, port.c_str(), &hints, &out.list);
  if (rc != 0) throw TransportError("cannot resolve " + ep.host + ": " + gai_strerror(rc));
}

}  // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<InProcChannel>(a_to_b, b_to_a), std::make_unique<InProcChannel>(b_to_a, a_to_b)};
}

Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon + 1 == s.size()) {
    throw std::invalid_argument("expected host:port, got '" + s + "'");
  }
  Endpoint ep;
  ep.host = s.substr(0, colon);
  if (ep.host.size() >= 2 && ep.host.front() == '[' && ep.host.back() == ']') {
    ep.host = ep.host.substr(1, ep.host.size() - 2);
  }
  unsigned port = 0;
  const char* first = s.data() + colon + 1;
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, port);
  if (ec != std::errc() || ptr != last || port > 65535) throw std::invalid_argument("bad port in '" + s + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

TcpListener::TcpListener(const Endpoint& at) {
  AddrInfo ai;
  resolve(at, true, ai);
  for (addrinfo* p = ai.list; p; p = p->ai_next) {
    const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  if (fd_ < 0) throw TransportError("cannot listen on " + at.host + ":" + std::to_string(at.port));

  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                     : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> TcpListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpChannel>(fd);
    if (errno != EINTR) throw TransportError(errno_text("accept"));
  }
}

std::unique_ptr<Channel> tcp_connect(const Endpoint& to, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string last_error = "no address";
  for (;;) {
    AddrInfo ai;
    resolve(to, false, ai);
    for (addrinfo* p = ai.list; p; p = p->ai_next) {
      const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) return std::make_unique<TcpChannel>(fd);
      last_error = errno_text("connect");
      ::close(fd);
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError("cannot connect to " + to.host + ":" + std::to_string(to.port) + " (" + last_error + ")");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace dfacto
