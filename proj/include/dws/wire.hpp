#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "taskgraph.hpp"

// Wire format shared by every transport backend.
//
//   frame   := u32 body_len | body
//   body    := u8 kind | u32 src | u32 dst | payload
//   key     := u32 template_id | i64 index[3]
//   item    := u8 kind | u32 rows | u32 cols | u64 n | f64[n] | u64 m | u64[m]
//
// All integers are fixed-width little-endian; doubles travel as their IEEE-754
// bit pattern so tiles round-trip bitwise.

namespace dws {

enum class MessageKind : std::uint8_t {
  Activate = 1,
  StealRequest = 2,
  StealGrant = 3,
  StealDeny = 4,
  TermToken = 5,
  TermStop = 6,
  TermStopped = 7,
  TermExit = 8,
};

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::Activate: return "ACTIVATE";
    case MessageKind::StealRequest: return "STEAL_REQUEST";
    case MessageKind::StealGrant: return "STEAL_GRANT";
    case MessageKind::StealDeny: return "STEAL_DENY";
    case MessageKind::TermToken: return "TERM_TOKEN";
    case MessageKind::TermStop: return "TERM_STOP";
    case MessageKind::TermStopped: return "TERM_STOPPED";
    case MessageKind::TermExit: return "TERM_EXIT";
  }
  return "?";
}

namespace detail {
inline bool same_item(const DataPtr& a, const DataPtr& b) {
  if (!a || !b) return !a && !b;
  return *a == *b;
}
}  // namespace detail

struct ActivateMsg {
  TaskKey key;
  std::uint32_t slot = 0;
  DataPtr item;

  friend bool operator==(const ActivateMsg& a, const ActivateMsg& b) {
    return a.key == b.key && a.slot == b.slot && detail::same_item(a.item, b.item);
  }
};

struct StealRequestMsg {
  NodeRank thief = 0;
  std::uint64_t request_id = 0;
  // Thief's current per-task migration cost estimate, consumed by the
  // victim's waiting-time gate.
  std::int64_t migration_cost_ns = 0;

  friend bool operator==(const StealRequestMsg&, const StealRequestMsg&) = default;
};

struct MigratedTask {
  TaskKey key;
  std::int64_t priority = 0;
  std::vector<DataPtr> inputs;

  friend bool operator==(const MigratedTask& a, const MigratedTask& b) {
    if (a.key != b.key || a.priority != b.priority || a.inputs.size() != b.inputs.size())
      return false;
    for (std::size_t i = 0; i < a.inputs.size(); ++i)
      if (!detail::same_item(a.inputs[i], b.inputs[i])) return false;
    return true;
  }
};

struct StealGrantMsg {
  std::uint64_t request_id = 0;
  std::vector<MigratedTask> tasks;

  friend bool operator==(const StealGrantMsg&, const StealGrantMsg&) = default;
};

struct StealDenyMsg {
  std::uint64_t request_id = 0;
  friend bool operator==(const StealDenyMsg&, const StealDenyMsg&) = default;
};

enum class TokenColor : std::uint8_t { White = 0, Black = 1 };

struct TermTokenMsg {
  TokenColor color = TokenColor::White;
  std::int64_t count = 0;
  std::uint64_t round = 0;
  friend bool operator==(const TermTokenMsg&, const TermTokenMsg&) = default;
};

struct TermStopMsg {
  friend bool operator==(const TermStopMsg&, const TermStopMsg&) = default;
};
struct TermStoppedMsg {
  friend bool operator==(const TermStoppedMsg&, const TermStoppedMsg&) = default;
};
struct TermExitMsg {
  friend bool operator==(const TermExitMsg&, const TermExitMsg&) = default;
};

using Payload = std::variant<ActivateMsg, StealRequestMsg, StealGrantMsg, StealDenyMsg,
                             TermTokenMsg, TermStopMsg, TermStoppedMsg, TermExitMsg>;

struct Message {
  NodeRank src = 0;
  NodeRank dst = 0;
  Payload payload;

  MessageKind kind() const noexcept {
    return static_cast<MessageKind>(payload.index() + 1);
  }

  /// Messages that carry work (activations and grants) take part in
  /// termination counting. Requests and denials never create work, so idle
  /// thieves polling each other cannot hold termination back.
  bool is_basic() const noexcept {
    const auto k = kind();
    return k == MessageKind::Activate || k == MessageKind::StealGrant;
  }

  friend bool operator==(const Message&, const Message&) = default;
};

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 4 + 4;

namespace detail {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  void key(const TaskKey& k) {
    u32(k.template_id);
    for (auto v : k.index) i64(v);
  }

  void item(const DataPtr& p) {
    static const DataItem kEmpty{};
    const DataItem& d = p ? *p : kEmpty;
    u8(static_cast<std::uint8_t>(d.kind));
    u32(d.rows);
    u32(d.cols);
    u64(d.values.size());
    for (double v : d.values) f64(v);
    u64(d.words.size());
    for (auto w : d.words) u64(w);
  }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }

  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { need(1); return in_[pos_++]; }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(get<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  TaskKey key() {
    TaskKey k;
    k.template_id = u32();
    for (auto& v : k.index) v = i64();
    return k;
  }

  DataPtr item() {
    auto d = std::make_shared<DataItem>();
    const auto kind = u8();
    if (kind > static_cast<std::uint8_t>(DataKind::Words))
      throw Error(ErrorCode::MalformedFrame, "unknown data kind " + std::to_string(kind));
    d->kind = static_cast<DataKind>(kind);
    d->rows = u32();
    d->cols = u32();
    const auto n = count(sizeof(double));
    d->values.resize(n);
    for (auto& v : d->values) v = f64();
    const auto m = count(sizeof(std::uint64_t));
    d->words.resize(m);
    for (auto& w : d->words) w = u64();
    return d;
  }

  // Element count guarded against lengths the remaining bytes cannot hold.
  std::size_t count(std::size_t elem_bytes) {
    const auto n = u64();
    if (n > remaining() / elem_bytes)
      throw Error(ErrorCode::MalformedFrame, "element count exceeds frame");
    return static_cast<std::size_t>(n);
  }

  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorCode::MalformedFrame, "truncated frame");
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes `msg` as one length-prefixed frame.
inline Bytes encode(const Message& msg) {
  Bytes out(4, 0);
  detail::Writer w(out);
  w.u8(static_cast<std::uint8_t>(msg.kind()));
  w.u32(msg.src);
  w.u32(msg.dst);
  std::visit(
      [&w](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ActivateMsg>) {
          w.key(p.key);
          w.u32(p.slot);
          w.item(p.item);
        } else if constexpr (std::is_same_v<T, StealRequestMsg>) {
          w.u32(p.thief);
          w.u64(p.request_id);
          w.i64(p.migration_cost_ns);
        } else if constexpr (std::is_same_v<T, StealGrantMsg>) {
          w.u64(p.request_id);
          w.u32(static_cast<std::uint32_t>(p.tasks.size()));
          for (const auto& t : p.tasks) {
            w.key(t.key);
            w.u32(t.key.template_id);
            w.i64(t.priority);
            w.u32(static_cast<std::uint32_t>(t.inputs.size()));
            for (const auto& in : t.inputs) {
              if (!in) throw Error(ErrorCode::MalformedFrame,
                                   "migrated task " + to_string(t.key) + " has an empty input");
              w.item(in);
            }
          }
        } else if constexpr (std::is_same_v<T, StealDenyMsg>) {
          w.u64(p.request_id);
        } else if constexpr (std::is_same_v<T, TermTokenMsg>) {
          w.u8(static_cast<std::uint8_t>(p.color));
          w.i64(p.count);
          w.u64(p.round);
        }
      },
      msg.payload);
  const auto body = static_cast<std::uint32_t>(out.size() - 4);
  for (std::size_t i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(body >> (8 * i));
  return out;
}

/// Length of the complete frame at the start of `buf`, if all of it is present.
inline std::optional<std::size_t> complete_frame_size(std::span<const std::uint8_t> buf) {
  if (buf.size() < 4) return std::nullopt;
  std::uint32_t body = 0;
  for (std::size_t i = 0; i < 4; ++i) body |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  if (buf.size() < 4 + static_cast<std::size_t>(body)) return std::nullopt;
  return 4 + static_cast<std::size_t>(body);
}

/// Parses exactly one frame; trailing or missing bytes are MALFORMED_FRAME.
inline Message decode(std::span<const std::uint8_t> frame) {
  const auto size = complete_frame_size(frame);
  if (!size || *size != frame.size() || frame.size() < kFrameHeaderBytes)
    throw Error(ErrorCode::MalformedFrame,
                "frame length mismatch (" + std::to_string(frame.size()) + " bytes)");
  detail::Reader r(frame.subspan(4));
  Message msg;
  const auto kind = r.u8();
  msg.src = r.u32();
  msg.dst = r.u32();
  switch (static_cast<MessageKind>(kind)) {
    case MessageKind::Activate: {
      ActivateMsg p;
      p.key = r.key();
      p.slot = r.u32();
      p.item = r.item();
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::StealRequest: {
      StealRequestMsg p;
      p.thief = r.u32();
      p.request_id = r.u64();
      p.migration_cost_ns = r.i64();
      msg.payload = p;
      break;
    }
    case MessageKind::StealGrant: {
      StealGrantMsg p;
      p.request_id = r.u64();
      const auto n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        MigratedTask t;
        t.key = r.key();
        if (r.u32() != t.key.template_id)
          throw Error(ErrorCode::MalformedFrame, "template id disagrees with key");
        t.priority = r.i64();
        const auto arity = r.u32();
        for (std::uint32_t j = 0; j < arity; ++j) t.inputs.push_back(r.item());
        p.tasks.push_back(std::move(t));
      }
      msg.payload = std::move(p);
      break;
    }
    case MessageKind::StealDeny: msg.payload = StealDenyMsg{r.u64()}; break;
    case MessageKind::TermToken: {
      TermTokenMsg p;
      const auto color = r.u8();
      if (color > 1) throw Error(ErrorCode::MalformedFrame, "bad token color");
      p.color = static_cast<TokenColor>(color);
      p.count = r.i64();
      p.round = r.u64();
      msg.payload = p;
      break;
    }
    case MessageKind::TermStop: msg.payload = TermStopMsg{}; break;
    case MessageKind::TermStopped: msg.payload = TermStoppedMsg{}; break;
    case MessageKind::TermExit: msg.payload = TermExitMsg{}; break;
    default:
      throw Error(ErrorCode::MalformedFrame, "unknown message kind " + std::to_string(kind));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::MalformedFrame, "trailing bytes in frame");
  return msg;
}

}  // namespace dws
