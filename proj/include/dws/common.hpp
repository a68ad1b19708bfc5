#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dws {

using NodeRank = std::uint32_t;
using Clock = std::chrono::steady_clock;

enum class ErrorCode {
  DoubleFill,
  BadSlot,
  UnknownTemplate,
  DuplicateKey,
  MalformedFrame,
  PeerDown,
  NotSpd,
  TreeTooLarge,
  TaskFailed,
  InvalidConfig,
  Timeout,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DoubleFill: return "DOUBLE_FILL";
    case ErrorCode::BadSlot: return "BAD_SLOT";
    case ErrorCode::UnknownTemplate: return "UNKNOWN_TEMPLATE";
    case ErrorCode::DuplicateKey: return "DUPLICATE_KEY";
    case ErrorCode::MalformedFrame: return "MALFORMED_FRAME";
    case ErrorCode::PeerDown: return "PEER_DOWN";
    case ErrorCode::NotSpd: return "NOT_SPD";
    case ErrorCode::TreeTooLarge: return "TREE_TOO_LARGE";
    case ErrorCode::TaskFailed: return "TASK_FAILED";
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::Timeout: return "TIMEOUT";
    case ErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

// All runtime failures surface as this exception; `code()` identifies the
// contract that was broken.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::int64_t to_ns(Clock::duration d) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(d).count();
}

// splitmix64 finalizer; used for key hashing, UTS child draws and
// reproducible per-node seeding.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace dws
