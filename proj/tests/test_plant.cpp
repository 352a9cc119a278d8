#include <gtest/gtest.h>

#include <cmath>

#include "cpsids/plant.hpp"

using namespace cpsids;

TEST(Plant, InflowIsPumpTimesMaxFlow) {
  PlantParams p;
  EXPECT_EQ(inflow(0, p), 0.0);
  EXPECT_EQ(inflow(1, p), 0.1);
  p.pump_max_flow = 0.05;
  EXPECT_EQ(inflow(1, p), 0.05);
}

TEST(Plant, OutflowFollowsTorricelli) {
  const PlantParams p;
  EXPECT_EQ(outflow(0, 0.9, p), 0.0);
  EXPECT_EQ(outflow(1, 0.0, p), 0.0);
  // 0.01 * sqrt(2 * 9.81 * 0.8), evaluated by hand.
  EXPECT_NEAR(outflow(1, 0.8, p), 0.03961817764612603, 1e-15);
}

TEST(Plant, OutflowRejectsNegativeLevel) {
  EXPECT_THROW(outflow(1, -0.01, PlantParams{}), DomainError);
  EXPECT_THROW(outflow(0, -0.01, PlantParams{}), DomainError);
}

TEST(Plant, EulerStep) {
  const PlantParams p;
  PlantState filling{0.5, 0, 0, 1, 0, 0};
  EXPECT_NEAR(step(filling, p).level, 0.51, 1e-15);

  PlantState idle{0.5, 0, 0, 0, 0, 0};
  EXPECT_EQ(step(idle, p).level, 0.5);

  PlantState draining{0.8, 0, 0, 0, 1, 0};
  const auto next = step(draining, p);
  EXPECT_NEAR(next.level, 0.7960381822353875, 1e-15);
  EXPECT_NEAR(next.outflow, 0.03961817764612603, 1e-15);
  EXPECT_EQ(next.inflow, 0.0);
  EXPECT_NEAR(next.time, 0.1, 1e-15);
}

TEST(Plant, StepClampsAtEmpty) {
  PlantParams p;
  p.outlet_section = 1.0;
  PlantState s{0.001, 0, 0, 0, 1, 0};
  EXPECT_EQ(step(s, p).level, 0.0);
}

TEST(Plant, ControlWithHysteresis) {
  const Thresholds t;
  EXPECT_EQ(control(0.4, t, {0, 1}), (Actuators{1, 0}));
  EXPECT_EQ(control(0.9, t, {1, 0}), (Actuators{0, 1}));
  EXPECT_EQ(control(0.6, t, {1, 0}), (Actuators{1, 0}));
  EXPECT_EQ(control(0.6, t, {0, 1}), (Actuators{0, 1}));
  // Exactly on a threshold is inside the dead band.
  EXPECT_EQ(control(0.5, t, {0, 1}), (Actuators{0, 1}));
  EXPECT_EQ(control(0.8, t, {1, 0}), (Actuators{1, 0}));
}

TEST(Plant, SafetyCheck) {
  const Thresholds t;
  EXPECT_EQ(safety_check(0.1, t), SafetyStatus::underflow_alarm);
  EXPECT_EQ(safety_check(1.3, t), SafetyStatus::overflow_alarm);
  EXPECT_EQ(safety_check(0.6, t), SafetyStatus::ok);
  EXPECT_EQ(safety_check(0.2, t), SafetyStatus::ok);
  EXPECT_EQ(safety_check(1.2, t), SafetyStatus::ok);
}

TEST(Plant, ValidationRejectsBadParameters) {
  Thresholds t;
  EXPECT_NO_THROW(validate(PlantParams{}, t));
  t.low = 0.9;
  EXPECT_THROW(validate(t), DataError);

  PlantParams p;
  p.dt = 0.0;
  EXPECT_THROW(validate(p, Thresholds{}), DataError);

  PlantParams weak_pump;
  weak_pump.pump_max_flow = 0.01;  // below a*sqrt(2gH) ~ 0.0396
  EXPECT_THROW(validate(weak_pump, Thresholds{}), DataError);
}

namespace {

// Closed loop on the true level, no protocol in between.
template <typename Visit>
void run_loop(std::size_t steps, Visit&& visit) {
  const PlantParams p;
  const Thresholds t;
  PlantState s;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto cmd = control(s.level, t, {s.pump, s.valve});
    s.pump = cmd.pump;
    s.valve = cmd.valve;
    const auto next = step(s, p);
    visit(k, s, next);
    s = next;
  }
}

}  // namespace

TEST(PlantProperty, MassBalanceAndNonNegativity) {
  const PlantParams p;
  run_loop(20000, [&](std::size_t, const PlantState& before, const PlantState& after) {
    ASSERT_GE(after.level, 0.0);
    if (after.level > 0.0) {
      ASSERT_NEAR(after.level - before.level, (after.inflow - after.outflow) * p.dt / p.tank_section, 1e-12);
    }
  });
}

TEST(PlantProperty, LimitCycleStaysInBand) {
  const PlantParams p;
  const Thresholds t;
  const double delta = max_step_change(p, t);
  int switches = 0;
  Actuators last{1, 0};
  run_loop(50000, [&](std::size_t, const PlantState& before, const PlantState& after) {
    ASSERT_EQ(safety_check(after.level, t), SafetyStatus::ok);
    if (switches >= 2) {
      ASSERT_GE(after.level, t.low - delta);
      ASSERT_LE(after.level, t.high + delta);
    }
    const Actuators now{before.pump, before.valve};
    if (!(now == last)) ++switches;
    last = now;
  });
  EXPECT_GT(switches, 100);
}

TEST(PlantProperty, Deterministic) {
  std::vector<double> a, b;
  run_loop(5000, [&](std::size_t, const PlantState&, const PlantState& s) { a.push_back(s.level); });
  run_loop(5000, [&](std::size_t, const PlantState&, const PlantState& s) { b.push_back(s.level); });
  EXPECT_EQ(a, b);
}
