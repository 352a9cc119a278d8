#pragma once

// In-process channel between the field devices and the PLC. Every frame goes
// through transmit(), which is where a man-in-the-middle can rewrite sensor
// values in read responses before they reach the controller.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "protocol.hpp"
#include "rng.hpp"

namespace cpsids {

enum class SignPolicy { random_per_frame, always_positive, always_negative };

inline const char* to_string(SignPolicy p) {
  switch (p) {
    case SignPolicy::random_per_frame: return "random_per_frame";
    case SignPolicy::always_positive: return "always_positive";
    case SignPolicy::always_negative: return "always_negative";
  }
  return "?";
}

inline SignPolicy parse_sign_policy(const std::string& s) {
  if (s == "random_per_frame") return SignPolicy::random_per_frame;
  if (s == "always_positive") return SignPolicy::always_positive;
  if (s == "always_negative") return SignPolicy::always_negative;
  throw DataError("unknown sign policy '" + s + "'");
}

struct AttackConfig {
  double intensity = 0.1;
  SignPolicy sign_policy = SignPolicy::random_per_frame;
  std::set<std::uint16_t> target;  // register addresses
  std::uint64_t window_start = 0;
  std::uint64_t window_end = std::numeric_limits<std::uint64_t>::max();  // exclusive

  bool in_window(std::uint64_t step) const { return step >= window_start && step < window_end; }
};

inline void validate(const AttackConfig& c) {
  if (!(c.intensity >= 0.0 && c.intensity <= 1.0)) throw DataError("attack intensity must lie in [0, 1]");
  if (c.target.empty()) throw DataError("attack needs at least one target register");
  if (c.window_start > c.window_end) throw DataError("attack window ends before it starts");
}

// Scales every targeted register of a read response by (1 + s*eps), with one
// sign s per frame. Other frames and registers pass through untouched.
// first_address is the start address of the request this response answers.
inline modbus::Frame fdi_modify(const modbus::Frame& frame, const AttackConfig& config, Rng& rng,
                                std::uint16_t first_address) {
  const auto* response = std::get_if<modbus::ReadResponse>(&frame.pdu);
  if (response == nullptr) return frame;

  bool any_target = false;
  for (std::size_t i = 0; i < response->values.size(); ++i) {
    if (config.target.contains(static_cast<std::uint16_t>(first_address + i))) any_target = true;
  }
  if (!any_target) return frame;

  double sign = 1.0;
  switch (config.sign_policy) {
    case SignPolicy::random_per_frame: sign = rng.coin() ? 1.0 : -1.0; break;
    case SignPolicy::always_positive: sign = 1.0; break;
    case SignPolicy::always_negative: sign = -1.0; break;
  }

  modbus::Frame out = frame;
  auto& values = std::get<modbus::ReadResponse>(out.pdu).values;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!config.target.contains(static_cast<std::uint16_t>(first_address + i))) continue;
    const double scaled = std::round(values[i] * (1.0 + sign * config.intensity));
    values[i] = static_cast<std::uint16_t>(std::clamp(scaled, 0.0, 65535.0));
  }
  return out;
}

enum class Direction { plc_to_field, field_to_plc };

inline const char* to_string(Direction d) {
  return d == Direction::plc_to_field ? "plc_to_field" : "field_to_plc";
}

struct LogEntry {
  std::uint64_t step = 0;
  Direction direction = Direction::plc_to_field;
  modbus::Bytes original;
  modbus::Bytes delivered;
  bool modified = false;
  std::string warning;
};

using ChannelLog = std::vector<LogEntry>;

class Channel {
 public:
  explicit Channel(std::uint64_t seed) : rng_(seed) {}

  void start_attack(const AttackConfig& config) {
    if (attack_) throw DataError("attack session already active");
    validate(config);
    attack_ = config;
  }

  void stop_attack() { attack_.reset(); }

  bool attacking() const { return attack_.has_value(); }

  // Forwards one frame. Read requests are remembered by transaction id so the
  // matching response can be mapped back to register addresses.
  modbus::Bytes transmit(std::span<const std::uint8_t> bytes, Direction direction, std::uint64_t step) {
    LogEntry entry;
    entry.step = step;
    entry.direction = direction;
    entry.original.assign(bytes.begin(), bytes.end());
    entry.delivered = entry.original;

    const auto expect =
        direction == Direction::plc_to_field ? modbus::Expect::request : modbus::Expect::response;
    std::optional<modbus::Frame> frame;
    try {
      frame = modbus::decode(bytes, expect);
    } catch (const modbus::DecodeError& e) {
      entry.warning = std::string("undecodable frame forwarded verbatim: ") + e.what();
    }

    if (frame) {
      if (const auto* rq = std::get_if<modbus::ReadRequest>(&frame->pdu)) {
        pending_reads_[frame->transaction_id] = rq->start_address;
      } else if (std::holds_alternative<modbus::ReadResponse>(frame->pdu)) {
        const auto it = pending_reads_.find(frame->transaction_id);
        if (it == pending_reads_.end()) {
          entry.warning = "read response without a matching request";
        } else {
          const auto first = it->second;
          pending_reads_.erase(it);
          if (attack_ && attack_->in_window(step)) {
            entry.delivered = modbus::encode(fdi_modify(*frame, *attack_, rng_, first));
          }
        }
      }
    }
    entry.modified = entry.delivered != entry.original;
    log_.push_back(entry);
    return entry.delivered;
  }

  const ChannelLog& log() const { return log_; }
  void clear_log() { log_.clear(); }

 private:
  Rng rng_;
  std::optional<AttackConfig> attack_;
  std::map<std::uint16_t, std::uint16_t> pending_reads_;
  ChannelLog log_;
};

namespace detail {

inline std::string register_values(const modbus::Bytes& bytes, Direction direction) {
  try {
    const auto f = modbus::decode(
        bytes, direction == Direction::plc_to_field ? modbus::Expect::request : modbus::Expect::response);
    std::string out;
    if (const auto* rs = std::get_if<modbus::ReadResponse>(&f.pdu)) {
      for (std::size_t i = 0; i < rs->values.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(rs->values[i]);
      }
    } else if (const auto* w = std::get_if<modbus::WriteRequest>(&f.pdu)) {
      out = std::to_string(w->value);
    } else if (const auto* w2 = std::get_if<modbus::WriteResponse>(&f.pdu)) {
      out = std::to_string(w2->value);
    }
    return out;
  } catch (const modbus::DecodeError&) {
    return "undecodable";
  }
}

}  // namespace detail

// step,direction,modified,original,delivered. Value columns hold the register
// values of the frame, ';'-separated; read requests carry none.
inline void write_log_csv(std::ostream& os, const ChannelLog& log) {
  os << "step,direction,modified,original,delivered\n";
  for (const auto& e : log) {
    os << e.step << ',' << to_string(e.direction) << ',' << (e.modified ? 1 : 0) << ','
       << detail::register_values(e.original, e.direction) << ','
       << detail::register_values(e.delivered, e.direction) << '\n';
  }
}

}  // namespace cpsids
