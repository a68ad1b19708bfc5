#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "dws/transport.hpp"

using namespace dws;
using namespace std::chrono_literals;

namespace {

Message numbered(NodeRank src, NodeRank dst, std::uint64_t n) { return Message{src, dst, StealDenyMsg{n}}; }

std::vector<Message> drain(Transport& t, std::size_t expect) {
  std::vector<Message> got;
  const auto deadline = Clock::now() + 10s;
  while (got.size() < expect && Clock::now() < deadline)
    if (auto m = t.receive(1ms)) got.push_back(std::move(*m));
  return got;
}

}  // namespace

TEST(InProc, DeliversCopiesToTheRightEndpoint) {
  InProcFabric fabric(3);
  auto a = fabric.endpoint(0), c = fabric.endpoint(2);
  auto item = make_dense_tile(1, 2, {1.5, 2.5});
  a->send(Message{0, 2, ActivateMsg{make_key(1, 4), 1, item}});
  auto got = c->receive(100ms);
  ASSERT_TRUE(got);
  const auto& act = std::get<ActivateMsg>(got->payload);
  EXPECT_EQ(act.key, make_key(1, 4));
  EXPECT_EQ(*act.item, *item);
  EXPECT_NE(act.item.get(), item.get());
  EXPECT_EQ(a->frames_sent(), 1u);
  EXPECT_EQ(c->frames_received(), 1u);
  EXPECT_FALSE(a->receive(1ms));
}

TEST(InProc, SelfSendWorks) {
  InProcFabric fabric(1);
  auto a = fabric.endpoint(0);
  a->send(numbered(0, 0, 5));
  auto got = a->receive(100ms);
  ASSERT_TRUE(got);
  EXPECT_EQ(std::get<StealDenyMsg>(got->payload).request_id, 5u);
}

TEST(InProc, PairsStayFifoUnderRandomDelays) {
  std::mt19937 rng(3);
  std::mutex mu;
  InProcFabric fabric(3, [&](const Message&) {
    std::lock_guard lock(mu);
    return std::chrono::microseconds(rng() % 2000);
  });
  auto a = fabric.endpoint(0), b = fabric.endpoint(1), c = fabric.endpoint(2);
  constexpr std::uint64_t kN = 200;
  std::thread ta([&] {
    for (std::uint64_t i = 0; i < kN; ++i) a->send(numbered(0, 2, i));
  });
  std::thread tb([&] {
    for (std::uint64_t i = 0; i < kN; ++i) b->send(numbered(1, 2, i));
  });
  ta.join();
  tb.join();
  auto got = drain(*c, 2 * kN);
  ASSERT_EQ(got.size(), 2 * kN);
  std::uint64_t next[2] = {0, 0};
  for (const auto& m : got) {
    const auto id = std::get<StealDenyMsg>(m.payload).request_id;
    EXPECT_EQ(id, next[m.src]++);
  }
}

TEST(InProc, DelayHoldsMessageBack) {
  InProcFabric fabric(2, [](const Message&) { return std::chrono::microseconds(30000); });
  auto a = fabric.endpoint(0), b = fabric.endpoint(1);
  const auto t0 = Clock::now();
  a->send(numbered(0, 1, 1));
  EXPECT_FALSE(b->receive(5ms));
  auto got = b->receive(1s);
  ASSERT_TRUE(got);
  EXPECT_GE(Clock::now() - t0, 29ms);
}

TEST(InProc, UnknownDestinationIsRejected) {
  InProcFabric fabric(2);
  auto a = fabric.endpoint(0);
  EXPECT_THROW(a->send(numbered(0, 5, 1)), Error);
}
