#include <gtest/gtest.h>

#include "vibetune/bus.hpp"

using namespace vibetune;
using bus::MessageBus;

namespace {

MessageBus team(telemetry::EventLog* log = nullptr) {
  MessageBus b(log);
  b.register_agent("PM", "PM");
  b.register_agent("SE1", "SE");
  b.register_agent("PG1.1", "PG");
  b.register_agent("CD", "CD");
  return b;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::InvalidDecimal;
}

}  // namespace

TEST(Bus, MessageCarriesSenderRoleTag) {
  auto b = team();
  b.send("CD", "PM", "Violation: v1.3.0 calls cuBLAS, which the requirements forbid.");
  const auto got = b.drain("PM");
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].role_tag, "[CD]");
  EXPECT_EQ(got[0].sender, "CD");
}

TEST(Bus, SelfSendIsDelivered) {
  auto b = team();
  b.send("SE1", "SE1", "note to self");
  const auto got = b.drain("SE1");
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].body, "note to self");
}

TEST(Bus, DeliversInSendOrder) {
  auto b = team();
  for (int i = 0; i < 100; ++i) b.send("PM", "PG1.1", std::to_string(i));
  const auto got = b.drain("PG1.1");
  ASSERT_EQ(got.size(), 100u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(got[static_cast<std::size_t>(i)].body, std::to_string(i));
  EXPECT_TRUE(b.drain("PG1.1").empty());
}

TEST(Bus, EmptyDrainLogsNothing) {
  telemetry::EventLog log;
  auto b = team(&log);
  EXPECT_TRUE(b.drain("CD").empty());
  EXPECT_EQ(log.size(), 0u);
}

TEST(Bus, InterleavedSendersKeepGlobalOrder) {
  auto b = team();
  std::vector<std::uint64_t> sent;
  for (int i = 0; i < 10; ++i) {
    sent.push_back(b.send(i % 2 ? "SE1" : "CD", "PM", "m" + std::to_string(i)).id);
  }
  const auto got = b.drain("PM");
  ASSERT_EQ(got.size(), sent.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].id, sent[i]);
    if (i) {
      EXPECT_LT(got[i - 1].id, got[i].id);
    }
  }
}

TEST(Bus, BroadcastReachesEveryoneButTheSender) {
  auto b = team();
  b.send("PM", std::string(bus::kBroadcast), "Prohibited libraries: cuBLAS, MKL.");
  EXPECT_EQ(b.pending("PM"), 0u);
  for (const char* id : {"SE1", "PG1.1", "CD"}) EXPECT_EQ(b.pending(id), 1u) << id;
}

TEST(Bus, RetiredAgentsRejectTraffic) {
  auto b = team();
  b.send("PM", "PG1.1", "queued");
  b.retire_agent("PG1.1");
  EXPECT_EQ(code_of([&] { b.send("PM", "PG1.1", "late"); }), Errc::DeadRecipient);
  EXPECT_EQ(code_of([&] { b.send("PG1.1", "PM", "ghost"); }), Errc::TerminatedAgent);
  EXPECT_EQ(code_of([&] { b.send("PM", "nobody", "?"); }), Errc::UnknownAgent);
  ASSERT_EQ(b.undelivered().size(), 1u);
  EXPECT_EQ(b.undelivered()[0].second, "PG1.1");
}

TEST(Bus, ReplayedMailboxesMatchLive) {
  telemetry::EventLog log;
  auto b = team(&log);
  b.send("PM", std::string(bus::kBroadcast), "hello");
  b.send("SE1", "PM", "report");
  b.drain("SE1");
  b.send("CD", "SE1", "x");
  const auto boxes = bus::replay_mailboxes(log.events(), log.events().back().seq);
  for (const char* id : {"PM", "SE1", "PG1.1", "CD"}) {
    const auto it = boxes.find(id);
    const std::vector<std::uint64_t> replayed = it == boxes.end() ? std::vector<std::uint64_t>{} : it->second;
    EXPECT_EQ(replayed, b.pending_ids(id)) << id;
  }
}
