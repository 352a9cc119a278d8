#pragma once

// Closed-loop data collection and the train/test set assembly built on it.
//
// One loop iteration: the PLC polls the sensor registers, the response crosses
// the (possibly attacked) channel, the PLC decodes it, runs the threshold
// law, writes the pump and valve registers, and the plant advances one step.
// A sample is the PLC's decoded view plus the actuator state that produced
// the sensed flows.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "plant.hpp"
#include "protocol.hpp"
#include "rng.hpp"
#include "wire.hpp"

namespace cpsids {

inline constexpr std::size_t kFeatureCount = 5;
using FeatureVector = std::array<double, kFeatureCount>;

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{"level", "inflow", "outflow",
                                                                      "pump", "valve"};

struct SampleRecord {
  double level = 0.0;
  double inflow = 0.0;
  double outflow = 0.0;
  int pump = 0;
  int valve = 0;
  int label = 0;  // 0 normal, 1 anomalous

  FeatureVector features() const {
    return {level, inflow, outflow, static_cast<double>(pump), static_cast<double>(valve)};
  }
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Where a record came from: the scenario ("normal" or "fdi" with its
// intensity) and the loop step inside that scenario's sampling window. An
// empty scenario means the origin is unknown.
struct Provenance {
  std::string scenario;
  std::optional<double> intensity;
  std::uint64_t step = 0;

  bool known() const { return !scenario.empty(); }
  friend bool operator==(const Provenance&, const Provenance&) = default;
  friend auto operator<=>(const Provenance& a, const Provenance& b) {
    return std::tie(a.scenario, a.intensity, a.step) <=> std::tie(b.scenario, b.intensity, b.step);
  }
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string to_string(const Provenance& p) {
  if (!p.known()) return "";
  std::string out = p.scenario;
  if (p.intensity) out += ":" + format_double(*p.intensity);
  out += "#" + std::to_string(p.step);
  return out;
}

inline Provenance parse_provenance(const std::string& text) {
  Provenance p;
  if (text.empty()) return p;
  const auto hash = text.rfind('#');
  if (hash == std::string::npos || hash == 0) throw DataError("provenance '" + text + "' lacks a step");
  std::string head = text.substr(0, hash);
  const std::string step = text.substr(hash + 1);
  const auto [ptr, ec] = std::from_chars(step.data(), step.data() + step.size(), p.step);
  if (ec != std::errc{} || ptr != step.data() + step.size()) {
    throw DataError("provenance '" + text + "' has a bad step");
  }
  if (const auto colon = head.find(':'); colon != std::string::npos) {
    const std::string eps = head.substr(colon + 1);
    double v = 0.0;
    const auto r = std::from_chars(eps.data(), eps.data() + eps.size(), v);
    if (r.ec != std::errc{} || r.ptr != eps.data() + eps.size()) {
      throw DataError("provenance '" + text + "' has a bad intensity");
    }
    p.intensity = v;
    head.resize(colon);
  }
  if (head.empty()) throw DataError("provenance '" + text + "' lacks a scenario");
  p.scenario = head;
  return p;
}

struct Dataset {
  std::vector<SampleRecord> records;
  std::vector<Provenance> provenance;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  void push_back(const SampleRecord& r, Provenance p) {
    records.push_back(r);
    provenance.push_back(std::move(p));
  }

  std::size_t count_label(int label) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.label == label;
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void validate(const SampleRecord& r) {
  if (r.label != 0 && r.label != 1) throw DataError("label must be 0 or 1");
  if ((r.pump != 0 && r.pump != 1) || (r.valve != 0 && r.valve != 1)) {
    throw DataError("pump and valve must be 0 or 1");
  }
}

inline void validate(const Dataset& d) {
  if (d.records.size() != d.provenance.size()) throw InvariantError("provenance length differs from records");
  for (const auto& r : d.records) validate(r);
}

// ---------------------------------------------------------------------------
// Closed loop

struct ScenarioConfig {
  std::uint64_t duration = 1000;  // steps in the sampling window
  std::optional<AttackConfig> attack;
  std::uint64_t sampling_stride = 1;
  std::uint64_t seed = 0;
  PlantState initial{};
};

class SafetyViolation : public DataError {
 public:
  using DataError::DataError;
};

// What the PLC decoded in one poll, next to the true plant state.
struct LoopStep {
  PlantState truth;     // state at sensing time
  double level = 0.0;   // decoded by the PLC
  double inflow = 0.0;
  double outflow = 0.0;
  Actuators sensed;     // actuators that produced the sensed flows
  Actuators commanded;  // actuators after the control decision
  bool attacked = false;
};

class ControlLoop {
 public:
  ControlLoop(const PlantParams& plant, const Thresholds& thresholds, const modbus::RegisterMap& registers,
              std::uint64_t channel_seed, PlantState initial = {})
      : plant_(plant), thresholds_(thresholds), registers_(registers), channel_(channel_seed), state_(initial) {
    validate(plant_, thresholds_);
    modbus::validate(registers_);
    if (state_.level < 0) throw DataError("initial level must be non-negative");
    state_.inflow = inflow(state_.pump, plant_);
    state_.outflow = outflow(state_.valve, state_.level, plant_);
  }

  Channel& channel() { return channel_; }
  const PlantState& state() const { return state_; }
  std::uint64_t steps() const { return step_; }

  LoopStep advance() {
    LoopStep out;
    out.truth = state_;
    out.sensed = {state_.pump, state_.valve};
    out.attacked = channel_.attacking();

    // PLC polls the sensors.
    const auto first = registers_.sensor_first();
    const auto count = registers_.sensor_count();
    const auto request = make_frame(modbus::ReadRequest{first, count});
    const auto req_bytes = channel_.transmit(modbus::encode(request), Direction::plc_to_field, step_);
    const auto polled = modbus::decode(req_bytes, modbus::Expect::request);
    const auto& rq = std::get<modbus::ReadRequest>(polled.pdu);

    // Sensor host answers with the current plant readings.
    modbus::ReadResponse values;
    values.values.assign(rq.count, 0);
    auto put = [&](std::uint16_t address, std::uint16_t v) { values.values[address - rq.start_address] = v; };
    put(registers_.level, modbus::to_register(state_.level, registers_.level_scale));
    put(registers_.inflow, modbus::to_register(inflow(state_.pump, plant_), registers_.flow_scale));
    put(registers_.outflow,
        modbus::to_register(outflow(state_.valve, state_.level, plant_), registers_.flow_scale));
    modbus::Frame response{polled.transaction_id, 0, polled.unit_id, values};
    const auto delivered = channel_.transmit(modbus::encode(response), Direction::field_to_plc, step_);

    // PLC view.
    const auto seen = modbus::decode(delivered, modbus::Expect::response);
    const auto& regs = std::get<modbus::ReadResponse>(seen.pdu).values;
    out.level = modbus::from_register(regs[registers_.level - first], registers_.level_scale);
    out.inflow = modbus::from_register(regs[registers_.inflow - first], registers_.flow_scale);
    out.outflow = modbus::from_register(regs[registers_.outflow - first], registers_.flow_scale);

    out.commanded = control(out.level, thresholds_, out.sensed);
    state_.pump = write(registers_.pump, out.commanded.pump);
    state_.valve = write(registers_.valve, out.commanded.valve);

    state_ = step(state_, plant_);
    ++step_;
    return out;
  }

 private:
  modbus::Frame make_frame(modbus::Pdu pdu) {
    return modbus::Frame{next_transaction_++, 0, 1, std::move(pdu)};
  }

  // Actuator command round trip; the field device applies what it receives.
  int write(std::uint16_t address, int value) {
    const auto cmd = make_frame(modbus::WriteRequest{address, static_cast<std::uint16_t>(value)});
    const auto got = modbus::decode(channel_.transmit(modbus::encode(cmd), Direction::plc_to_field, step_));
    const auto& w = std::get<modbus::WriteRequest>(got.pdu);
    const modbus::Frame echo{got.transaction_id, 0, got.unit_id, modbus::WriteResponse{w.address, w.value}};
    channel_.transmit(modbus::encode(echo), Direction::field_to_plc, step_);
    return w.value != 0 ? 1 : 0;
  }

  PlantParams plant_;
  Thresholds thresholds_;
  modbus::RegisterMap registers_;
  Channel channel_;
  PlantState state_;
  std::uint64_t step_ = 0;
  std::uint16_t next_transaction_ = 1;
};

inline constexpr std::uint64_t kMaxWarmupSteps = 1'000'000;

// Runs the loop unattacked through one full fill/drain cycle (two actuator
// switches). Throws if the cycle never completes or a safety alarm fires.
inline void warm_up(ControlLoop& loop, const Thresholds& thresholds) {
  int switches = 0;
  while (switches < 2) {
    if (loop.steps() >= kMaxWarmupSteps) throw DataError("warm-up never completed a fill/drain cycle");
    const auto s = loop.advance();
    if (safety_check(loop.state().level, thresholds) != SafetyStatus::ok) {
      throw SafetyViolation("safety alarm during warm-up");
    }
    if (s.commanded != s.sensed) ++switches;
  }
}

// Records one sample every sampling_stride steps of the window. In an attack
// scenario only steps inside the attack window are kept, labelled 1.
inline Dataset collect(const ScenarioConfig& scenario, const PlantParams& plant, const Thresholds& thresholds,
                       const modbus::RegisterMap& registers, ChannelLog* log = nullptr) {
  if (scenario.sampling_stride < 1 || scenario.duration < scenario.sampling_stride) {
    throw DataError("scenario needs duration >= sampling_stride >= 1");
  }
  if (scenario.attack) validate(*scenario.attack);

  ControlLoop loop(plant, thresholds, registers, derive_seed(scenario.seed, "channel"), scenario.initial);
  warm_up(loop, thresholds);
  const std::uint64_t origin = loop.steps();

  Provenance tag;
  if (scenario.attack) {
    tag.scenario = "fdi";
    tag.intensity = scenario.attack->intensity;
    AttackConfig absolute = *scenario.attack;
    absolute.window_start = origin + std::min(absolute.window_start, scenario.duration);
    absolute.window_end = origin + std::min(absolute.window_end, scenario.duration);
    loop.channel().start_attack(absolute);
  } else {
    tag.scenario = "normal";
  }

  Dataset out;
  out.records.reserve(scenario.duration / scenario.sampling_stride + 1);
  for (std::uint64_t k = 0; k < scenario.duration; ++k) {
    const auto s = loop.advance();
    if (!scenario.attack && safety_check(loop.state().level, thresholds) != SafetyStatus::ok) {
      throw SafetyViolation("safety alarm during an unattacked run at step " + std::to_string(k));
    }
    if (k % scenario.sampling_stride != 0) continue;
    if (scenario.attack && !scenario.attack->in_window(k)) continue;
    SampleRecord r{s.level, s.inflow, s.outflow, s.sensed.pump, s.sensed.valve, scenario.attack ? 1 : 0};
    tag.step = k;
    out.push_back(r, tag);
  }
  if (scenario.attack) loop.channel().stop_attack();
  if (log) *log = loop.channel().log();
  return out;
}

// ---------------------------------------------------------------------------
// Set assembly

inline Dataset take_label(const Dataset& d, int label, std::size_t count, const char* what) {
  Dataset out;
  for (std::size_t i = 0; i < d.size() && out.size() < count; ++i) {
    if (d.records[i].label == label) out.push_back(d.records[i], d.provenance[i]);
  }
  if (out.size() < count) {
    throw DataError(std::string(what) + ": need " + std::to_string(count) + " records of label " +
                    std::to_string(label) + ", have " + std::to_string(out.size()));
  }
  return out;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  out.provenance.insert(out.provenance.end(), b.provenance.begin(), b.provenance.end());
  return out;
}

inline Dataset build_training_set(const Dataset& normal, const Dataset& attacked, std::size_t size_per_class,
                                  Rng& rng) {
  const Dataset both = concat(take_label(normal, 0, size_per_class, "training set"),
                              take_label(attacked, 1, size_per_class, "training set"));
  std::vector<std::size_t> order(both.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  Dataset out;
  for (auto i : order) out.push_back(both.records[i], both.provenance[i]);
  return out;
}

// Throws if any known provenance appears in both sets.
inline void check_disjoint(const Dataset& a, const Dataset& b) {
  std::set<Provenance> seen;
  for (const auto& p : a.provenance) {
    if (p.known()) seen.insert(p);
  }
  for (const auto& p : b.provenance) {
    if (p.known() && seen.contains(p)) throw DataError("record " + to_string(p) + " is in both sets");
  }
}

struct TestSetSpec {
  std::vector<double> intensities{0.01, 0.05, 0.10, 0.15, 0.20};
  std::size_t normal_count = 500;
  std::size_t per_intensity = 100;
};

// Normal records first, then each intensity in ascending order.
inline Dataset build_test_set(const Dataset& normal, const std::map<double, Dataset>& attacked_by_intensity,
                              const TestSetSpec& spec = {}, std::span<const Dataset> training = {}) {
  Dataset out = take_label(normal, 0, spec.normal_count, "test set (normal)");
  std::vector<double> wanted = spec.intensities;
  std::sort(wanted.begin(), wanted.end());
  for (double eps : wanted) {
    const auto it = attacked_by_intensity.find(eps);
    if (it == attacked_by_intensity.end()) {
      throw DataError("test set: no attacked records for intensity " + format_double(eps));
    }
    out = concat(out, take_label(it->second, 1, spec.per_intensity, "test set (attacked)"));
  }
  for (const auto& t : training) check_disjoint(t, out);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kDatasetHeader = "level,inflow,outflow,pump,valve,label,provenance";

inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const Dataset& d) {
  validate(d);
  os << kDatasetHeader << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = d.records[i];
    os << format_g9(r.level) << ',' << format_g9(r.inflow) << ',' << format_g9(r.outflow) << ',' << r.pump
       << ',' << r.valve << ',' << r.label << ',' << to_string(d.provenance[i]) << '\n';
  }
}

inline Dataset read_csv(std::istream& is, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || line != kDatasetHeader) {
    throw DataError(source + ":1: expected header '" + std::string(kDatasetHeader) + "'");
  }
  Dataset d;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 7) throw DataError(where + "expected 7 fields, got " + std::to_string(cells.size()));
    auto number = [&](const std::string& cell) {
      double v = 0.0;
      const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || r.ec != std::errc{} || r.ptr != cell.data() + cell.size()) {
        throw DataError(where + "bad number '" + cell + "'");
      }
      return v;
    };
    auto binary = [&](const std::string& cell, const char* name) {
      if (cell != "0" && cell != "1") throw DataError(where + name + " must be 0 or 1, got '" + cell + "'");
      return cell == "1" ? 1 : 0;
    };
    SampleRecord r{number(cells[0]), number(cells[1]), number(cells[2]),
                   binary(cells[3], "pump"), binary(cells[4], "valve"), binary(cells[5], "label")};
    try {
      d.push_back(r, parse_provenance(cells[6]));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return d;
}

inline void save(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_csv(os, d);
  if (!os) throw DataError("write failed for " + path);
}

inline Dataset load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  return read_csv(is, path);
}

}  // namespace cpsids
