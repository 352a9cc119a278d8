#pragma once

// Modbus/TCP framing for the subset the control loop uses: read holding
// registers (0x03) and write single register (0x06). Everything on the wire
// is big-endian. Exception responses are not modelled.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"

namespace cpsids::modbus {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kReadHoldingRegisters = 0x03;
inline constexpr std::uint8_t kWriteSingleRegister = 0x06;
inline constexpr std::size_t kMbapSize = 7;
inline constexpr std::size_t kMaxReadCount = 125;

struct ReadRequest {
  std::uint16_t start_address = 0;
  std::uint16_t count = 1;
  friend bool operator==(const ReadRequest&, const ReadRequest&) = default;
};

struct ReadResponse {
  std::vector<std::uint16_t> values;
  friend bool operator==(const ReadResponse&, const ReadResponse&) = default;
};

struct WriteRequest {
  std::uint16_t address = 0;
  std::uint16_t value = 0;
  friend bool operator==(const WriteRequest&, const WriteRequest&) = default;
};

struct WriteResponse {
  std::uint16_t address = 0;
  std::uint16_t value = 0;
  friend bool operator==(const WriteResponse&, const WriteResponse&) = default;
};

using Pdu = std::variant<ReadRequest, ReadResponse, WriteRequest, WriteResponse>;

struct Frame {
  std::uint16_t transaction_id = 0;
  std::uint16_t protocol_id = 0;
  std::uint8_t unit_id = 1;
  Pdu pdu;
  friend bool operator==(const Frame&, const Frame&) = default;
};

inline bool is_request(const Frame& f) {
  return std::holds_alternative<ReadRequest>(f.pdu) || std::holds_alternative<WriteRequest>(f.pdu);
}

class EncodeError : public DomainError {
 public:
  using DomainError::DomainError;
};

class DecodeError : public DataError {
 public:
  enum class Kind { truncated, bad_protocol_id, length_mismatch, unsupported_function };

  DecodeError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline std::uint16_t get16(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint16_t>((in[at] << 8) | in[at + 1]);
}

}  // namespace detail

inline Bytes encode(const Frame& frame) {
  if (frame.protocol_id != 0) throw EncodeError("protocol id must be 0");

  Bytes pdu;
  if (const auto* rq = std::get_if<ReadRequest>(&frame.pdu)) {
    if (rq->count < 1 || rq->count > kMaxReadCount) {
      throw EncodeError("read count " + std::to_string(rq->count) + " outside 1..125");
    }
    pdu.push_back(kReadHoldingRegisters);
    detail::put16(pdu, rq->start_address);
    detail::put16(pdu, rq->count);
  } else if (const auto* rs = std::get_if<ReadResponse>(&frame.pdu)) {
    if (rs->values.empty() || rs->values.size() > kMaxReadCount) {
      throw EncodeError("register list of " + std::to_string(rs->values.size()) +
                        " values outside 1..125");
    }
    pdu.push_back(kReadHoldingRegisters);
    pdu.push_back(static_cast<std::uint8_t>(2 * rs->values.size()));
    for (auto v : rs->values) detail::put16(pdu, v);
  } else if (const auto* wq = std::get_if<WriteRequest>(&frame.pdu)) {
    pdu.push_back(kWriteSingleRegister);
    detail::put16(pdu, wq->address);
    detail::put16(pdu, wq->value);
  } else {
    const auto& ws = std::get<WriteResponse>(frame.pdu);
    pdu.push_back(kWriteSingleRegister);
    detail::put16(pdu, ws.address);
    detail::put16(pdu, ws.value);
  }

  Bytes out;
  out.reserve(kMbapSize + pdu.size());
  detail::put16(out, frame.transaction_id);
  detail::put16(out, frame.protocol_id);
  detail::put16(out, static_cast<std::uint16_t>(1 + pdu.size()));
  out.push_back(frame.unit_id);
  out.insert(out.end(), pdu.begin(), pdu.end());
  return out;
}

// A write-single-register response echoes its request byte for byte, so the
// caller has to say which one it expects. Read frames are told apart by shape.
enum class Expect { request, response };

struct Decoded {
  Frame frame;
  std::size_t consumed = 0;  // MBAP + declared length
  std::size_t trailing = 0;  // bytes left in the buffer after the frame
};

inline Decoded decode_frame(std::span<const std::uint8_t> in, Expect expect = Expect::request) {
  using Kind = DecodeError::Kind;
  if (in.size() < kMbapSize + 1) {
    throw DecodeError(Kind::truncated, "buffer of " + std::to_string(in.size()) +
                                           " bytes is shorter than an MBAP header and function code");
  }
  Frame f;
  f.transaction_id = detail::get16(in, 0);
  f.protocol_id = detail::get16(in, 2);
  const std::uint16_t length = detail::get16(in, 4);
  f.unit_id = in[6];
  if (f.protocol_id != 0) {
    throw DecodeError(Kind::bad_protocol_id, "protocol id " + std::to_string(f.protocol_id));
  }
  if (length < 2) {
    throw DecodeError(Kind::length_mismatch, "declared length " + std::to_string(length) + " too small");
  }
  const std::size_t total = 6 + static_cast<std::size_t>(length);
  if (in.size() < total) {
    throw DecodeError(Kind::truncated, "declared length needs " + std::to_string(total) +
                                           " bytes, buffer has " + std::to_string(in.size()));
  }
  const auto pdu = in.subspan(kMbapSize, length - 1);
  const std::uint8_t function = pdu[0];
  const std::size_t body = pdu.size() - 1;

  auto mismatch = [&](const char* what) {
    return DecodeError(Kind::length_mismatch, std::string(what) + ": declared length " +
                                                  std::to_string(length) + " does not fit the PDU");
  };

  if (function == kReadHoldingRegisters) {
    if (body == 4) {
      ReadRequest rq{detail::get16(pdu, 1), detail::get16(pdu, 3)};
      if (rq.count < 1 || rq.count > kMaxReadCount) throw mismatch("read request count");
      f.pdu = rq;
    } else {
      if (body < 1) throw mismatch("read response");
      const std::size_t byte_count = pdu[1];
      if (byte_count == 0 || byte_count % 2 != 0 || body != 1 + byte_count) {
        throw mismatch("read response byte count");
      }
      ReadResponse rs;
      rs.values.reserve(byte_count / 2);
      for (std::size_t i = 0; i < byte_count; i += 2) rs.values.push_back(detail::get16(pdu, 2 + i));
      f.pdu = std::move(rs);
    }
  } else if (function == kWriteSingleRegister) {
    if (body != 4) throw mismatch("write single register");
    const auto address = detail::get16(pdu, 1);
    const auto value = detail::get16(pdu, 3);
    if (expect == Expect::response) {
      f.pdu = WriteResponse{address, value};
    } else {
      f.pdu = WriteRequest{address, value};
    }
  } else {
    char code[8];
    std::snprintf(code, sizeof code, "0x%02X", function);
    throw DecodeError(Kind::unsupported_function, std::string("unsupported function code ") + code);
  }
  return {std::move(f), total, in.size() - total};
}

inline Frame decode(std::span<const std::uint8_t> in, Expect expect = Expect::request) {
  return decode_frame(in, expect).frame;
}

// Fixed-point carriage of a non-negative analog value in one register.
inline std::uint16_t to_register(double value, int scale) {
  if (scale <= 0) throw DomainError("fixed-point scale must be positive");
  const double scaled = value * scale;
  if (!(scaled >= 0.0 && scaled <= 65535.0)) {
    throw DomainError("value " + std::to_string(value) + " does not fit a register at scale " +
                      std::to_string(scale));
  }
  return static_cast<std::uint16_t>(std::lround(scaled));
}

inline double from_register(std::uint16_t raw, int scale) {
  if (scale <= 0) throw DomainError("fixed-point scale must be positive");
  return static_cast<double>(raw) / scale;
}

inline std::uint16_t encode_level(double level, int scale = 1000) { return to_register(level, scale); }
inline double decode_level(std::uint16_t raw, int scale = 1000) { return from_register(raw, scale); }

// Where the field devices expose their values. Sensors are read with one
// request spanning the lowest to the highest sensor address.
struct RegisterMap {
  std::uint16_t level = 0;
  std::uint16_t inflow = 1;
  std::uint16_t outflow = 2;
  std::uint16_t pump = 3;
  std::uint16_t valve = 4;
  int level_scale = 1000;
  int flow_scale = 10000;

  std::uint16_t sensor_first() const { return std::min({level, inflow, outflow}); }
  std::uint16_t sensor_count() const {
    return static_cast<std::uint16_t>(std::max({level, inflow, outflow}) - sensor_first() + 1);
  }
};

inline void validate(const RegisterMap& m) {
  const std::set<std::uint16_t> distinct{m.level, m.inflow, m.outflow, m.pump, m.valve};
  if (distinct.size() != 5) throw DataError("register addresses must be distinct");
  if (m.level_scale <= 0 || m.flow_scale <= 0) throw DataError("fixed-point scales must be positive");
  if (m.sensor_count() > kMaxReadCount) throw DataError("sensor registers span more than 125 addresses");
}

}  // namespace cpsids::modbus
