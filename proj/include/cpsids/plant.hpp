#pragma once

// Single water tank under on/off level control. The pump fills the tank at a
// fixed rate, the outlet valve drains it by gravity (Torricelli), and the
// level is integrated with explicit Euler.

#include <cmath>
#include <string>
#include <utility>

#include "error.hpp"

namespace cpsids {

struct PlantParams {
  double pump_max_flow = 0.1;   // m^3/s
  double tank_section = 1.0;    // m^2
  double outlet_section = 0.01; // m^2
  double gravity = 9.81;        // m/s^2
  double dt = 0.1;              // s
};

struct Thresholds {
  double low_low = 0.2;
  double low = 0.5;
  double high = 0.8;
  double high_high = 1.2;
};

struct PlantState {
  double level = 0.5;
  double inflow = 0.0;
  double outflow = 0.0;
  int pump = 1;
  int valve = 0;
  double time = 0.0;
};

enum class SafetyStatus { ok, underflow_alarm, overflow_alarm };

inline const char* to_string(SafetyStatus s) {
  switch (s) {
    case SafetyStatus::ok: return "ok";
    case SafetyStatus::underflow_alarm: return "underflow_alarm";
    case SafetyStatus::overflow_alarm: return "overflow_alarm";
  }
  return "?";
}

struct Actuators {
  int pump = 0;
  int valve = 0;
  friend bool operator==(const Actuators&, const Actuators&) = default;
};

inline void validate(const Thresholds& t) {
  if (!(0.0 < t.low_low && t.low_low < t.low && t.low < t.high && t.high < t.high_high)) {
    throw DataError("thresholds must satisfy 0 < LL < L < H < HH");
  }
}

// Checks positivity and that the pump outruns the drain at the H threshold,
// otherwise the fill phase never ends.
inline void validate(const PlantParams& p, const Thresholds& t) {
  if (!(p.pump_max_flow > 0 && p.tank_section > 0 && p.outlet_section > 0 && p.gravity > 0 &&
        p.dt > 0)) {
    throw DataError("plant parameters must be strictly positive");
  }
  validate(t);
  if (!(p.pump_max_flow > p.outlet_section * std::sqrt(2.0 * p.gravity * t.high))) {
    throw DataError("pump_max_flow must exceed the outflow at the H threshold");
  }
}

inline double inflow(int pump, const PlantParams& p) {
  if (pump != 0 && pump != 1) throw DomainError("pump state must be 0 or 1");
  return pump * p.pump_max_flow;
}

inline double outflow(int valve, double level, const PlantParams& p) {
  if (valve != 0 && valve != 1) throw DomainError("valve state must be 0 or 1");
  if (level < 0 || std::isnan(level)) {
    throw DomainError("negative tank level " + std::to_string(level));
  }
  if (valve == 0) return 0.0;
  return p.outlet_section * std::sqrt(2.0 * p.gravity * level);
}

// One Euler step. Flows are evaluated from the actuators and level at the
// start of the step and stored in the returned state.
inline PlantState step(const PlantState& s, const PlantParams& p) {
  PlantState next = s;
  next.inflow = inflow(s.pump, p);
  next.outflow = outflow(s.valve, s.level, p);
  next.level = std::max(0.0, s.level + (next.inflow - next.outflow) * p.dt / p.tank_section);
  next.time = s.time + p.dt;
  return next;
}

// Below L: fill. Above H: drain. In between: keep the current actuators.
inline Actuators control(double measured_level, const Thresholds& t, Actuators current) {
  if (measured_level < t.low) return {1, 0};
  if (measured_level > t.high) return {0, 1};
  return current;
}

inline SafetyStatus safety_check(double level, const Thresholds& t) {
  if (level < t.low_low) return SafetyStatus::underflow_alarm;
  if (level > t.high_high) return SafetyStatus::overflow_alarm;
  return SafetyStatus::ok;
}

// Largest level change a single step can produce.
inline double max_step_change(const PlantParams& p, const Thresholds& t) {
  const double drain = p.outlet_section * std::sqrt(2.0 * p.gravity * t.high_high);
  return std::max(p.pump_max_flow, drain) * p.dt / p.tank_section;
}

}  // namespace cpsids
