#include <gtest/gtest.h>

#include <sstream>

#include "cpsids/wire.hpp"

using namespace cpsids;
using namespace cpsids::modbus;

namespace {

AttackConfig level_attack(double eps) {
  AttackConfig a;
  a.intensity = eps;
  a.target = {0};
  return a;
}

Bytes request(std::uint16_t txn, std::uint16_t start = 0, std::uint16_t count = 3) {
  return encode(Frame{txn, 0, 1, ReadRequest{start, count}});
}

Bytes response(std::uint16_t txn, std::vector<std::uint16_t> values) {
  return encode(Frame{txn, 0, 1, ReadResponse{std::move(values)}});
}

std::vector<std::uint16_t> values_of(const Bytes& b) {
  return std::get<ReadResponse>(decode(b, Expect::response).pdu).values;
}

}  // namespace

TEST(FdiModify, ZeroIntensityIsIdentity) {
  Rng rng(1);
  const Frame f{1, 0, 1, ReadResponse{{500, 1000, 357}}};
  AttackConfig a = level_attack(0.0);
  a.target = {0, 1, 2};
  EXPECT_EQ(fdi_modify(f, a, rng, 0), f);
}

TEST(FdiModify, ScalesTargetedRegister) {
  Rng rng(1);
  const Frame f{1, 0, 1, ReadResponse{{500, 1000}}};
  AttackConfig up = level_attack(0.10);
  up.sign_policy = SignPolicy::always_positive;
  EXPECT_EQ(std::get<ReadResponse>(fdi_modify(f, up, rng, 0).pdu).values, (std::vector<std::uint16_t>{550, 1000}));

  AttackConfig down = level_attack(0.01);
  down.sign_policy = SignPolicy::always_negative;
  EXPECT_EQ(std::get<ReadResponse>(fdi_modify(f, down, rng, 0).pdu).values, (std::vector<std::uint16_t>{495, 1000}));
}

TEST(FdiModify, UsesStartAddressOfRequest) {
  Rng rng(1);
  AttackConfig a = level_attack(0.5);
  a.target = {11};
  a.sign_policy = SignPolicy::always_positive;
  const Frame f{1, 0, 1, ReadResponse{{100, 100, 100}}};
  EXPECT_EQ(std::get<ReadResponse>(fdi_modify(f, a, rng, 10).pdu).values,
            (std::vector<std::uint16_t>{100, 150, 100}));
}

TEST(FdiModify, ClampsInsteadOfWrapping) {
  Rng rng(1);
  AttackConfig a = level_attack(0.2);
  a.sign_policy = SignPolicy::always_positive;
  const Frame f{1, 0, 1, ReadResponse{{65000}}};
  EXPECT_EQ(std::get<ReadResponse>(fdi_modify(f, a, rng, 0).pdu).values[0], 65535);
}

TEST(FdiModify, LeavesOtherFramesAlone) {
  Rng rng(1);
  const auto a = level_attack(0.2);
  const Frame rq{1, 0, 1, ReadRequest{0, 3}};
  const Frame wr{2, 0, 1, WriteRequest{0, 500}};
  EXPECT_EQ(fdi_modify(rq, a, rng, 0), rq);
  EXPECT_EQ(fdi_modify(wr, a, rng, 0), wr);
}

TEST(Channel, PassThroughWithoutAttack) {
  Channel ch(1);
  const auto rq = request(1);
  const auto rs = response(1, {500, 1000, 0});
  EXPECT_EQ(ch.transmit(rq, Direction::plc_to_field, 0), rq);
  EXPECT_EQ(ch.transmit(rs, Direction::field_to_plc, 0), rs);
  ASSERT_EQ(ch.log().size(), 2u);
  EXPECT_FALSE(ch.log()[0].modified);
  EXPECT_FALSE(ch.log()[1].modified);
}

TEST(Channel, RequestsUnchangedUnderAttack) {
  Channel ch(1);
  ch.start_attack(level_attack(0.2));
  const auto rq = request(1);
  EXPECT_EQ(ch.transmit(rq, Direction::plc_to_field, 0), rq);
  const auto wr = encode(Frame{2, 0, 1, WriteRequest{3, 1}});
  EXPECT_EQ(ch.transmit(wr, Direction::plc_to_field, 0), wr);
}

TEST(Channel, ResponseCarriesModifiedLevel) {
  Channel ch(7);
  ch.start_attack(level_attack(0.10));
  ch.transmit(request(1), Direction::plc_to_field, 0);
  const auto original = response(1, {500, 1000, 357});
  const auto delivered = ch.transmit(original, Direction::field_to_plc, 0);
  const auto v = values_of(delivered);
  EXPECT_TRUE(v[0] == 550 || v[0] == 450) << v[0];
  EXPECT_EQ(v[1], 1000);
  EXPECT_EQ(v[2], 357);
  ASSERT_EQ(delivered.size(), original.size());
  // Only the two bytes of the level value may differ.
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (i == 9 || i == 10) continue;
    EXPECT_EQ(delivered[i], original[i]) << "byte " << i;
  }
  EXPECT_TRUE(ch.log().back().modified);
}

TEST(Channel, UndecodableBytesPassVerbatimWithWarning) {
  Channel ch(1);
  ch.start_attack(level_attack(0.2));
  const Bytes junk{0xDE, 0xAD};
  EXPECT_EQ(ch.transmit(junk, Direction::field_to_plc, 0), junk);
  EXPECT_FALSE(ch.log().back().warning.empty());
  EXPECT_FALSE(ch.log().back().modified);
}

TEST(Channel, ResponseWithoutRequestIsNotTouched) {
  Channel ch(1);
  ch.start_attack(level_attack(0.2));
  const auto rs = response(99, {500});
  EXPECT_EQ(ch.transmit(rs, Direction::field_to_plc, 0), rs);
  EXPECT_FALSE(ch.log().back().warning.empty());
}

TEST(Channel, WindowLimitsTheAttack) {
  Channel ch(1);
  auto a = level_attack(0.2);
  a.window_start = 5;
  a.window_end = 6;
  ch.start_attack(a);
  for (std::uint64_t step = 0; step < 10; ++step) {
    ch.transmit(request(static_cast<std::uint16_t>(step)), Direction::plc_to_field, step);
    ch.transmit(response(static_cast<std::uint16_t>(step), {500}), Direction::field_to_plc, step);
  }
  for (const auto& e : ch.log()) EXPECT_EQ(e.modified, e.step == 5 && e.direction == Direction::field_to_plc);
}

TEST(AttackSession, StartStopWithoutTraffic) {
  Channel ch(1);
  ch.start_attack(level_attack(0.2));
  ch.stop_attack();
  EXPECT_TRUE(ch.log().empty());
}

TEST(AttackSession, DoubleActivationFails) {
  Channel ch(1);
  ch.start_attack(level_attack(0.2));
  EXPECT_THROW(ch.start_attack(level_attack(0.1)), DataError);
}

TEST(AttackSession, InvalidConfigRejected) {
  Channel ch(1);
  EXPECT_THROW(ch.start_attack(level_attack(1.5)), DataError);
  AttackConfig none;
  EXPECT_THROW(ch.start_attack(none), DataError);
}

TEST(AttackSession, ScriptedTenFrames) {
  Channel ch(5);
  ch.start_attack(level_attack(0.2));
  for (std::uint16_t txn = 0; txn < 5; ++txn) {
    ch.transmit(request(txn), Direction::plc_to_field, txn);
    ch.transmit(response(txn, {500, 1000, 0}), Direction::field_to_plc, txn);
  }
  ASSERT_EQ(ch.log().size(), 10u);
  for (const auto& e : ch.log()) EXPECT_EQ(e.modified, e.direction == Direction::field_to_plc);

  ch.stop_attack();
  ch.transmit(request(9), Direction::plc_to_field, 9);
  ch.transmit(response(9, {500, 1000, 0}), Direction::field_to_plc, 9);
  EXPECT_FALSE(ch.log().back().modified);
}

TEST(ChannelLog, CsvExport) {
  Channel ch(5);
  auto a = level_attack(0.2);
  a.sign_policy = SignPolicy::always_negative;
  ch.start_attack(a);
  ch.transmit(request(1), Direction::plc_to_field, 3);
  ch.transmit(response(1, {500, 1000, 0}), Direction::field_to_plc, 3);
  std::ostringstream os;
  write_log_csv(os, ch.log());
  EXPECT_EQ(os.str(),
            "step,direction,modified,original,delivered\n"
            "3,plc_to_field,0,,\n"
            "3,field_to_plc,1,500;1000;0,400;1000;0\n");
}

TEST(WireProperty, ScopeBoundAndDeterminism) {
  auto run = [](std::uint64_t seed) {
    Channel ch(seed);
    AttackConfig a = level_attack(0.17);
    a.target = {0, 2};
    ch.start_attack(a);
    Rng traffic(99);
    for (std::uint16_t txn = 0; txn < 500; ++txn) {
      std::vector<std::uint16_t> v(3);
      for (auto& x : v) x = static_cast<std::uint16_t>(traffic.below(65536));
      ch.transmit(request(txn), Direction::plc_to_field, txn);
      ch.transmit(response(txn, v), Direction::field_to_plc, txn);
    }
    return ch.log();
  };
  const auto log = run(3);
  for (const auto& e : log) {
    if (e.direction != Direction::field_to_plc) {
      ASSERT_EQ(e.original, e.delivered);
      continue;
    }
    const auto before = values_of(e.original);
    const auto after = values_of(e.delivered);
    ASSERT_EQ(before[1], after[1]);
    for (std::size_t i : {0u, 2u}) {
      const double v = before[i];
      ASSERT_LE(std::abs(double(after[i]) - v), std::ceil(v * 0.17) + 1);
    }
  }
  const auto again = run(3);
  ASSERT_EQ(again.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) ASSERT_EQ(again[i].delivered, log[i].delivered);
}
