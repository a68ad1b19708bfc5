#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include "transport.hpp"

namespace dws {

struct PeerAddress {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "rank host:port" lines; blank lines and '#' comments are ignored.
/// Ranks must cover [0, n) exactly once.
inline std::vector<PeerAddress> parse_hostfile(std::istream& in) {
  std::map<NodeRank, PeerAddress> by_rank;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long rank = -1;
    std::string addr;
    if (!(ls >> rank)) continue;
    const auto colon = (ls >> addr) ? addr.rfind(':') : std::string::npos;
    if (rank < 0 || colon == std::string::npos || colon == 0)
      throw Error(ErrorCode::InvalidConfig, "hostfile line " + std::to_string(lineno) +
                                                ": expected 'rank host:port'");
    const auto port = std::strtol(addr.c_str() + colon + 1, nullptr, 10);
    if (port <= 0 || port > 65535)
      throw Error(ErrorCode::InvalidConfig, "hostfile line " + std::to_string(lineno) + ": bad port");
    if (!by_rank.emplace(static_cast<NodeRank>(rank),
                         PeerAddress{addr.substr(0, colon), static_cast<std::uint16_t>(port)})
             .second)
      throw Error(ErrorCode::InvalidConfig, "hostfile: duplicate rank " + std::to_string(rank));
  }
  std::vector<PeerAddress> peers;
  for (auto& [rank, addr] : by_rank) {
    if (rank != peers.size())
      throw Error(ErrorCode::InvalidConfig, "hostfile: missing rank " + std::to_string(peers.size()));
    peers.push_back(addr);
  }
  return peers;
}

inline std::vector<PeerAddress> load_hostfile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open hostfile " + path);
  return parse_hostfile(in);
}

/// One process (or thread group) per node over TCP. Each ordered pair of
/// ranks, self included, gets its own connection, so per-pair FIFO is TCP's.
class SocketTransport final : public Transport {
 public:
  /// Binds and listens. DWS_BIND_ADDR overrides `bind_host`; port 0 picks an
  /// ephemeral port (see `port()`).
  SocketTransport(NodeRank rank, std::size_t nodes, std::string bind_host, std::uint16_t port)
      : rank_(rank), nodes_(nodes), out_(nodes, -1), out_mutex_(nodes) {
    if (const char* env = std::getenv("DWS_BIND_ADDR")) bind_host = env;
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail("socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(bind_host, port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
      fail("bind " + bind_host + ":" + std::to_string(port));
    if (::listen(listen_fd_, static_cast<int>(nodes) + 8) < 0) fail("listen");
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~SocketTransport() override { close(); }

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  NodeRank rank() const override { return rank_; }
  std::size_t size() const override { return nodes_; }

  /// Opens a connection to every peer and accepts one from each. Blocks until
  /// the full mesh exists, which doubles as the start barrier.
  void connect(const std::vector<PeerAddress>& peers, std::chrono::milliseconds timeout) {
    if (peers.size() != nodes_)
      throw Error(ErrorCode::InvalidConfig, "hostfile lists " + std::to_string(peers.size()) +
                                                " ranks, expected " + std::to_string(nodes_));
    const auto deadline = Clock::now() + timeout;
    for (NodeRank peer = 0; peer < nodes_; ++peer) {
      for (;;) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr = resolve(peers[peer].host, peers[peer].port);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
          int one = 1;
          ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
          std::uint8_t hello[4];
          for (int i = 0; i < 4; ++i) hello[i] = static_cast<std::uint8_t>(rank_ >> (8 * i));
          write_all(fd, hello, sizeof hello);
          out_[peer] = fd;
          break;
        }
        ::close(fd);
        if (Clock::now() > deadline)
          throw Error(ErrorCode::PeerDown, "rank " + std::to_string(rank_) +
                                               " could not reach rank " + std::to_string(peer));
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
    for (std::size_t accepted = 0; accepted < nodes_; ++accepted) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0 || ::poll(&pfd, 1, static_cast<int>(left.count())) <= 0)
        throw Error(ErrorCode::PeerDown, "rank " + std::to_string(rank_) + " accepted only " +
                                             std::to_string(accepted) + " peers");
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) fail("accept");
      std::uint8_t hello[4];
      if (!read_all(fd, hello, sizeof hello)) fail("handshake");
      NodeRank from = 0;
      for (int i = 0; i < 4; ++i) from |= static_cast<NodeRank>(hello[i]) << (8 * i);
      in_fds_.push_back(fd);
      readers_.emplace_back([this, fd, from] { read_loop(fd, from); });
    }
  }

  void send(const Message& msg) override {
    if (msg.dst >= nodes_ || out_[msg.dst] < 0)
      throw Error(ErrorCode::PeerDown, "no connection to rank " + std::to_string(msg.dst));
    const auto bytes = encode(msg);
    count_sent();
    std::lock_guard lock(out_mutex_[msg.dst]);
    write_all(out_[msg.dst], bytes.data(), bytes.size());
  }

  std::optional<Message> receive(std::chrono::microseconds timeout) override {
    std::unique_lock lock(inbox_mutex_);
    inbox_cv_.wait_for(lock, timeout, [this] { return !inbox_.empty() || !failure_.empty(); });
    if (!failure_.empty()) throw Error(ErrorCode::PeerDown, failure_);
    if (inbox_.empty()) return std::nullopt;
    auto msg = std::move(inbox_.front());
    inbox_.pop_front();
    count_received();
    return msg;
  }

  void close() override {
    if (closed_.exchange(true)) return;
    for (int fd : out_)
      if (fd >= 0) ::shutdown(fd, SHUT_WR);
    // Unblock our readers without waiting for peers to close their side.
    for (int fd : in_fds_) ::shutdown(fd, SHUT_RDWR);
    for (auto& t : readers_) t.join();
    for (int fd : out_)
      if (fd >= 0) ::close(fd);
    for (int fd : in_fds_) ::close(fd);
    if (listen_fd_ >= 0) ::close(listen_fd_);
  }

 private:
  static sockaddr_in resolve(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (host.empty() || host == "*" || host == "0.0.0.0") {
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
      return addr;
    }
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
      throw Error(ErrorCode::InvalidConfig, "cannot resolve host " + host);
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::PeerDown,
                "rank " + std::to_string(rank_) + ": " + what + ": " + std::strerror(errno));
  }

  void write_all(int fd, const std::uint8_t* data, std::size_t n) const {
    while (n > 0) {
      const auto w = ::send(fd, data, n, MSG_NOSIGNAL);
      if (w < 0 && errno == EINTR) continue;
      if (w <= 0) fail("send");
      data += w;
      n -= static_cast<std::size_t>(w);
    }
  }

  static bool read_all(int fd, std::uint8_t* data, std::size_t n) {
    while (n > 0) {
      const auto r = ::recv(fd, data, n, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) return false;
      data += r;
      n -= static_cast<std::size_t>(r);
    }
    return true;
  }

  void read_loop(int fd, NodeRank from) {
    Bytes buf;
    std::uint8_t chunk[64 * 1024];
    for (;;) {
      const auto r = ::recv(fd, chunk, sizeof chunk, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) return;  // orderly shutdown by the peer
      if (r < 0) {
        if (!closed_) report("connection from rank " + std::to_string(from) + " failed: " +
                             std::strerror(errno));
        return;
      }
      buf.insert(buf.end(), chunk, chunk + r);
      std::size_t off = 0;
      while (auto size = complete_frame_size(std::span(buf).subspan(off))) {
        try {
          auto msg = decode(std::span(buf).subspan(off, *size));
          {
            std::lock_guard lock(inbox_mutex_);
            inbox_.push_back(std::move(msg));
          }
          inbox_cv_.notify_one();
        } catch (const Error& e) {
          report(e.what());
          return;
        }
        off += *size;
      }
      buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(off));
    }
  }

  void report(std::string what) {
    {
      std::lock_guard lock(inbox_mutex_);
      if (failure_.empty()) failure_ = "rank " + std::to_string(rank_) + ": " + std::move(what);
    }
    inbox_cv_.notify_all();
  }

  NodeRank rank_;
  std::size_t nodes_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::vector<int> out_;
  std::vector<std::mutex> out_mutex_;
  std::vector<int> in_fds_;
  std::vector<std::thread> readers_;
  std::atomic<bool> closed_{false};

  std::mutex inbox_mutex_;
  std::condition_variable inbox_cv_;
  std::deque<Message> inbox_;
  std::string failure_;
};

}  // namespace dws
