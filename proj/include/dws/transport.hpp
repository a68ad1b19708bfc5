#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "wire.hpp"

namespace dws {

/// One node's view of the interconnect. `send` may be called from any thread;
/// `receive` is called only by the node's communication agent.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual NodeRank rank() const = 0;
  virtual std::size_t size() const = 0;
  virtual void send(const Message& msg) = 0;
  virtual std::optional<Message> receive(std::chrono::microseconds timeout) = 0;
  virtual void close() {}

  std::uint64_t frames_sent() const noexcept { return frames_sent_.load(); }
  std::uint64_t frames_received() const noexcept { return frames_received_.load(); }

 protected:
  void count_sent() noexcept { frames_sent_.fetch_add(1, std::memory_order_relaxed); }
  void count_received() noexcept { frames_received_.fetch_add(1, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> frames_sent_{0};
  std::atomic<std::uint64_t> frames_received_{0};
};

/// Test hook: extra latency to impose on a message before it can be received.
using DelayFn = std::function<std::chrono::microseconds(const Message&)>;

/// N logical nodes inside one process. Every message is encoded on send and
/// decoded on receive, so data crosses node boundaries by copy exactly as it
/// does over sockets.
class InProcFabric {
 public:
  explicit InProcFabric(std::size_t nodes, DelayFn delay = {})
      : boxes_(nodes), delay_(std::move(delay)) {
    for (auto& b : boxes_) b = std::make_unique<Mailbox>();
  }

  std::size_t size() const noexcept { return boxes_.size(); }

  std::unique_ptr<Transport> endpoint(NodeRank rank);

 private:
  friend class InProcEndpoint;

  struct Frame {
    Clock::time_point ready_at;
    Bytes bytes;
  };

  struct Mailbox {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Frame> frames;
    Clock::time_point last_ready{};
  };

  void post(const Message& msg) {
    if (msg.dst >= boxes_.size())
      throw Error(ErrorCode::InvalidConfig, "destination rank " + std::to_string(msg.dst));
    auto bytes = encode(msg);
    auto ready = Clock::now();
    if (delay_) ready += delay_(msg);
    auto& box = *boxes_[msg.dst];
    {
      std::lock_guard lock(box.mutex);
      // Head-of-line ordering keeps every (src, dst) pair FIFO even when a
      // message is delayed.
      ready = std::max(ready, box.last_ready);
      box.last_ready = ready;
      box.frames.push_back(Frame{ready, std::move(bytes)});
    }
    box.cv.notify_one();
  }

  std::optional<Message> take(NodeRank rank, std::chrono::microseconds timeout) {
    auto& box = *boxes_[rank];
    const auto deadline = Clock::now() + timeout;
    std::unique_lock lock(box.mutex);
    for (;;) {
      const auto now = Clock::now();
      if (!box.frames.empty() && box.frames.front().ready_at <= now) {
        auto frame = std::move(box.frames.front());
        box.frames.pop_front();
        lock.unlock();
        return decode(frame.bytes);
      }
      if (now >= deadline) return std::nullopt;
      auto wake = deadline;
      if (!box.frames.empty()) wake = std::min(wake, box.frames.front().ready_at);
      box.cv.wait_until(lock, wake);
    }
  }

  std::vector<std::unique_ptr<Mailbox>> boxes_;
  DelayFn delay_;
};

class InProcEndpoint final : public Transport {
 public:
  InProcEndpoint(InProcFabric& fabric, NodeRank rank) : fabric_(fabric), rank_(rank) {}

  NodeRank rank() const override { return rank_; }
  std::size_t size() const override { return fabric_.size(); }

  void send(const Message& msg) override {
    count_sent();
    fabric_.post(msg);
  }

  std::optional<Message> receive(std::chrono::microseconds timeout) override {
    auto msg = fabric_.take(rank_, timeout);
    if (msg) count_received();
    return msg;
  }

 private:
  InProcFabric& fabric_;
  NodeRank rank_;
};

inline std::unique_ptr<Transport> InProcFabric::endpoint(NodeRank rank) {
  return std::make_unique<InProcEndpoint>(*this, rank);
}

}  // namespace dws
