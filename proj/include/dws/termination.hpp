#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "wire.hpp"

namespace dws {

/// Safra's token-ring termination detection.
///
/// Every node counts basic messages (sent minus received) and turns black on
/// receipt. A token travels 0 -> 1 -> ... -> P-1 -> 0, leaving each node only
/// while that node is passive and accumulating counts and colors. Rank 0
/// declares termination when a round returns white with a zero total and rank
/// 0 itself is white and passive. Counters are updated from any thread; token
/// handling happens on the communication agent only.
class SafraDetector {
 public:
  SafraDetector(NodeRank rank, std::size_t nodes) : rank_(rank), nodes_(nodes) {
    if (rank == 0) token_ = TermTokenMsg{TokenColor::White, 0, 0};
  }

  void on_basic_send() noexcept { counter_.fetch_add(1, std::memory_order_acq_rel); }

  void on_basic_receive() noexcept {
    counter_.fetch_sub(1, std::memory_order_acq_rel);
    black_.store(true, std::memory_order_release);
  }

  /// Marks the node black without a receipt (spontaneous activity such as a
  /// thief issuing a request while passive).
  void blacken() noexcept { black_.store(true, std::memory_order_release); }

  void on_token(const TermTokenMsg& token) { token_ = token; }

  bool holds_token() const noexcept { return token_.has_value(); }
  std::int64_t counter() const noexcept { return counter_.load(std::memory_order_acquire); }
  bool black() const noexcept { return black_.load(std::memory_order_acquire); }
  std::uint64_t rounds() const noexcept { return rounds_; }

  struct Step {
    std::optional<Message> forward;  // token to pass on
    bool terminated = false;
  };

  /// Advances the protocol; call only while the node is passive.
  Step on_passive() {
    Step step;
    if (!token_ || terminated_) return step;
    auto token = *token_;
    if (rank_ == 0) {
      if (token.round > 0 && token.color == TokenColor::White && !black() &&
          token.count + counter() == 0) {
        terminated_ = true;
        step.terminated = true;
        token_.reset();
        return step;
      }
      // Start a fresh round.
      ++rounds_;
      black_.store(false, std::memory_order_release);
      token = TermTokenMsg{TokenColor::White, 0, rounds_};
      if (nodes_ == 1) {
        // The ring is just rank 0: the round completes immediately.
        token_ = token;
        return on_passive_single();
      }
      token_.reset();
      step.forward = Message{rank_, next(), token};
      return step;
    }
    token.count += counter();
    if (black_.exchange(false, std::memory_order_acq_rel)) token.color = TokenColor::Black;
    token_.reset();
    step.forward = Message{rank_, next(), token};
    return step;
  }

  bool terminated() const noexcept { return terminated_; }

 private:
  Step on_passive_single() {
    Step step;
    if (!black() && counter() == 0) {
      terminated_ = true;
      step.terminated = true;
      token_.reset();
    }
    return step;
  }

  NodeRank next() const noexcept { return static_cast<NodeRank>((rank_ + 1) % nodes_); }

  NodeRank rank_;
  std::size_t nodes_;
  std::atomic<std::int64_t> counter_{0};
  std::atomic<bool> black_{false};
  std::optional<TermTokenMsg> token_;
  std::uint64_t rounds_ = 0;
  bool terminated_ = false;
};

}  // namespace dws
