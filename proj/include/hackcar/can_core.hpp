#pragma once

// CAN 2.0A data frames, the HackCar message catalog and the signal codecs.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hackcar/error.hpp"

namespace hackcar {

inline constexpr std::uint16_t kMaxStandardId = 0x7FF;
inline constexpr std::uint8_t kMaxDlc = 8;

/// Bus participant identifier. Lower values win equal-ID arbitration ties.
struct NodeId {
  std::uint16_t value = 0;
  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

namespace nodes {
inline constexpr NodeId ssc{0};
inline constexpr NodeId mcu{1};
inline constexpr NodeId attacker{2};
inline constexpr NodeId detector{3};
inline constexpr NodeId gateway{4};
}  // namespace nodes

inline std::string node_name(NodeId node) {
  switch (node.value) {
    case 0: return "ssc";
    case 1: return "mcu";
    case 2: return "attacker";
    case 3: return "detector";
    case 4: return "gateway";
    default: return "node" + std::to_string(node.value);
  }
}

inline std::optional<NodeId> parse_node_name(std::string_view name) {
  for (std::uint16_t v = 0; v <= 4; ++v) {
    if (node_name(NodeId{v}) == name) return NodeId{v};
  }
  if (name.starts_with("node")) {
    try {
      return NodeId{static_cast<std::uint16_t>(std::stoul(std::string(name.substr(4))))};
    } catch (...) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

/// One CAN 2.0A data frame as it exists on the virtual wire.
struct CanFrame {
  std::uint16_t id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, kMaxDlc> data{};
  SimTime enqueue_time = 0;
  std::optional<SimTime> completion_time;

  std::span<const std::uint8_t> payload() const { return {data.data(), dlc}; }

  bool valid() const {
    if (id > kMaxStandardId || dlc > kMaxDlc) return false;
    if (completion_time && *completion_time <= enqueue_time) return false;
    return true;
  }

  static CanFrame make(std::uint16_t id, std::span<const std::uint8_t> payload,
                       SimTime enqueue_time = 0) {
    if (id > kMaxStandardId) {
      throw Error(Errc::MalformedFrame, "identifier exceeds 11 bits: " + std::to_string(id));
    }
    if (payload.size() > kMaxDlc) {
      throw Error(Errc::MalformedFrame, "payload longer than 8 bytes");
    }
    CanFrame f;
    f.id = id;
    f.dlc = static_cast<std::uint8_t>(payload.size());
    std::copy(payload.begin(), payload.end(), f.data.begin());
    f.enqueue_time = enqueue_time;
    return f;
  }

  friend bool operator==(const CanFrame& a, const CanFrame& b) {
    return a.id == b.id && a.dlc == b.dlc &&
           std::equal(a.data.begin(), a.data.begin() + a.dlc, b.data.begin()) &&
           a.enqueue_time == b.enqueue_time && a.completion_time == b.completion_time;
  }
};

inline void require_valid(const CanFrame& f) {
  if (!f.valid()) {
    throw Error(Errc::MalformedFrame, "invalid frame id=" + std::to_string(f.id) +
                                          " dlc=" + std::to_string(f.dlc));
  }
}

// ---------------------------------------------------------------------------
// Signals

enum class SignalKind : std::uint8_t { Rpm, Steering, Brake, Mode, Aeb, Attack, Raw };

inline std::string_view to_string(SignalKind k) {
  switch (k) {
    case SignalKind::Rpm: return "rpm";
    case SignalKind::Steering: return "steering";
    case SignalKind::Brake: return "brake";
    case SignalKind::Mode: return "mode";
    case SignalKind::Aeb: return "aeb";
    case SignalKind::Attack: return "attack";
    case SignalKind::Raw: return "raw";
  }
  return "?";
}

inline std::optional<SignalKind> parse_signal_kind(std::string_view s) {
  for (auto k : {SignalKind::Rpm, SignalKind::Steering, SignalKind::Brake, SignalKind::Mode,
                 SignalKind::Aeb, SignalKind::Attack, SignalKind::Raw}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

enum class DriveMode : std::uint8_t { ManualAEB = 0, AutoDrive = 1 };

inline std::string_view to_string(DriveMode m) {
  return m == DriveMode::ManualAEB ? "ManualAEB" : "AutoDrive";
}

inline std::optional<DriveMode> parse_drive_mode(std::string_view s) {
  if (s == "ManualAEB") return DriveMode::ManualAEB;
  if (s == "AutoDrive") return DriveMode::AutoDrive;
  return std::nullopt;
}

/// A decoded signal. `value` is in the signal's engineering unit: rpm,
/// milliradians, brake effort 0-255, or the enum ordinal for service messages.
/// Enum payloads are decoded verbatim, so an out-of-range byte survives
/// decoding and is rejected by the consumer.
struct SignalValue {
  SignalKind kind = SignalKind::Raw;
  std::int64_t value = 0;

  static constexpr SignalValue rpm(std::int64_t v) { return {SignalKind::Rpm, v}; }
  static constexpr SignalValue steering_mrad(std::int64_t v) { return {SignalKind::Steering, v}; }
  static constexpr SignalValue brake(std::int64_t v) { return {SignalKind::Brake, v}; }
  static constexpr SignalValue mode(DriveMode m) {
    return {SignalKind::Mode, static_cast<std::int64_t>(m)};
  }
  static constexpr SignalValue aeb(bool on) { return {SignalKind::Aeb, on ? 1 : 0}; }
  static constexpr SignalValue attack(bool start) { return {SignalKind::Attack, start ? 1 : 0}; }

  /// True when an enum-kind value names a defined enumerator.
  constexpr bool enum_in_range() const {
    switch (kind) {
      case SignalKind::Mode:
      case SignalKind::Aeb:
      case SignalKind::Attack: return value == 0 || value == 1;
      default: return true;
    }
  }

  friend constexpr bool operator==(const SignalValue&, const SignalValue&) = default;
};

enum class ByteOrder : std::uint8_t { Little, Big };

/// Integer signal codec: `width` bytes at offset 0, two's complement when signed.
struct SignalCodec {
  std::uint8_t width = 1;
  bool is_signed = false;
  ByteOrder order = ByteOrder::Little;
  double scale = 1.0;
  std::string unit;
  std::int64_t min = 0;
  std::int64_t max = 255;

  std::int64_t saturate(std::int64_t v) const { return std::clamp(v, min, max); }

  friend bool operator==(const SignalCodec&, const SignalCodec&) = default;
};

struct CatalogMessage {
  std::string name;
  std::uint16_t id = 0;
  std::uint8_t dlc = 0;
  std::optional<int> period_ms;  // absent for event-driven service messages
  NodeId producer;
  SignalKind kind = SignalKind::Raw;
  SignalCodec encoding;

  friend bool operator==(const CatalogMessage&, const CatalogMessage&) = default;
};

namespace ids {
inline constexpr std::uint16_t rpm = 0x400;
inline constexpr std::uint16_t steering = 0x401;
inline constexpr std::uint16_t brake = 0x402;
inline constexpr std::uint16_t mode = 0x500;
inline constexpr std::uint16_t aeb = 0x501;
inline constexpr std::uint16_t attack = 0x502;
}  // namespace ids

class Catalog {
 public:
  Catalog() = default;

  explicit Catalog(std::vector<CatalogMessage> messages) : messages_(std::move(messages)) {
    validate();
  }

  /// The six-message HackCar set.
  static Catalog hackcar() {
    const SignalCodec i32{4, true, ByteOrder::Little, 1.0, "rpm", -32768 * 2, 32767 * 2};
    const SignalCodec mrad{4, true, ByteOrder::Little, 1.0, "mrad",
                           std::numeric_limits<std::int32_t>::min(),
                           std::numeric_limits<std::int32_t>::max()};
    const SignalCodec effort{1, false, ByteOrder::Little, 1.0, "effort", 0, 255};
    const SignalCodec flag{1, false, ByteOrder::Little, 1.0, "enum", 0, 255};
    return Catalog({
        {"RPM", ids::rpm, 4, 10, nodes::ssc, SignalKind::Rpm, i32},
        {"STEERING", ids::steering, 4, 10, nodes::ssc, SignalKind::Steering, mrad},
        {"BREAK", ids::brake, 1, 10, nodes::ssc, SignalKind::Brake, effort},
        {"MODE", ids::mode, 1, std::nullopt, nodes::gateway, SignalKind::Mode, flag},
        {"AEB", ids::aeb, 1, std::nullopt, nodes::gateway, SignalKind::Aeb, flag},
        {"ATTACK", ids::attack, 1, std::nullopt, nodes::gateway, SignalKind::Attack, flag},
    });
  }

  const std::vector<CatalogMessage>& messages() const { return messages_; }
  std::size_t size() const { return messages_.size(); }

  const CatalogMessage* find(std::uint16_t id) const {
    auto it = std::find_if(messages_.begin(), messages_.end(),
                           [id](const CatalogMessage& m) { return m.id == id; });
    return it == messages_.end() ? nullptr : &*it;
  }

  const CatalogMessage& at(std::uint16_t id) const {
    if (const auto* m = find(id)) return *m;
    throw Error(Errc::UnknownId, "no catalog entry for id " + std::to_string(id));
  }

  const CatalogMessage* find_kind(SignalKind kind) const {
    auto it = std::find_if(messages_.begin(), messages_.end(),
                           [kind](const CatalogMessage& m) { return m.kind == kind; });
    return it == messages_.end() ? nullptr : &*it;
  }

  /// Adds or replaces entries by id.
  void merge(const std::vector<CatalogMessage>& extra) {
    for (const auto& m : extra) {
      auto it = std::find_if(messages_.begin(), messages_.end(),
                             [&](const CatalogMessage& e) { return e.id == m.id; });
      if (it != messages_.end()) {
        *it = m;
      } else {
        messages_.push_back(m);
      }
    }
    validate();
  }

  friend bool operator==(const Catalog&, const Catalog&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < messages_.size(); ++i) {
      const auto& m = messages_[i];
      if (m.id > kMaxStandardId) {
        throw Error(Errc::MalformedFrame, m.name + ": identifier exceeds 11 bits");
      }
      if (m.dlc > kMaxDlc || m.encoding.width == 0 || m.encoding.width > m.dlc ||
          m.encoding.width > 8) {
        throw Error(Errc::MalformedFrame, m.name + ": encoding width does not fit the DLC");
      }
      if (m.encoding.min > m.encoding.max) {
        throw Error(Errc::MalformedFrame, m.name + ": empty saturation range");
      }
      if (m.period_ms && *m.period_ms <= 0) {
        throw Error(Errc::MalformedFrame, m.name + ": period must be positive");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (messages_[j].id == m.id) {
          throw Error(Errc::MalformedFrame, "duplicate catalog id " + std::to_string(m.id));
        }
      }
    }
  }

  std::vector<CatalogMessage> messages_;
};

// ---------------------------------------------------------------------------
// Codec

inline CanFrame encode_frame(const CatalogMessage& msg, SignalValue value, SimTime t) {
  if (value.kind != msg.kind) {
    throw Error(Errc::CatalogMismatch, std::string(to_string(value.kind)) +
                                           " value does not match message " + msg.name);
  }
  const auto& enc = msg.encoding;
  const double scaled = static_cast<double>(value.value) / enc.scale;
  std::int64_t raw;
  if (!std::isfinite(scaled) || scaled >= 9.2e18) {
    raw = enc.max;
  } else if (scaled <= -9.2e18) {
    raw = enc.min;
  } else {
    raw = enc.saturate(std::llround(scaled));
  }

  CanFrame f;
  f.id = msg.id;
  f.dlc = msg.dlc;
  f.enqueue_time = t;
  const auto bits = static_cast<std::uint64_t>(raw);
  for (std::uint8_t i = 0; i < enc.width; ++i) {
    const auto byte = static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF);
    const std::size_t pos = enc.order == ByteOrder::Little ? i : enc.width - 1 - i;
    f.data[pos] = byte;
  }
  return f;
}

inline SignalValue decode_frame(const CanFrame& frame, const CatalogMessage& msg) {
  if (frame.dlc != msg.dlc) {
    throw Error(Errc::MalformedFrame, msg.name + " expects dlc " + std::to_string(msg.dlc) +
                                          ", got " + std::to_string(frame.dlc));
  }
  const auto& enc = msg.encoding;
  std::uint64_t bits = 0;
  for (std::uint8_t i = 0; i < enc.width; ++i) {
    const std::size_t pos = enc.order == ByteOrder::Little ? i : enc.width - 1 - i;
    bits |= static_cast<std::uint64_t>(frame.data[pos]) << (8 * i);
  }
  std::int64_t raw;
  if (enc.is_signed && enc.width < 8 && (bits >> (8 * enc.width - 1)) & 1U) {
    raw = static_cast<std::int64_t>(bits | (~std::uint64_t{0} << (8 * enc.width)));
  } else {
    raw = static_cast<std::int64_t>(bits);
  }
  const std::int64_t value =
      enc.scale == 1.0 ? raw : std::llround(static_cast<double>(raw) * enc.scale);
  return {msg.kind, value};
}

inline SignalValue decode_frame(const CanFrame& frame, const Catalog& catalog) {
  const auto* msg = catalog.find(frame.id);
  if (msg == nullptr) {
    throw Error(Errc::UnknownId, "id " + std::to_string(frame.id) + " not in catalog");
  }
  return decode_frame(frame, *msg);
}

// ---------------------------------------------------------------------------
// Wire-level serialization (bit stuffing, CRC-15)

inline constexpr std::uint16_t kCrc15Polynomial = 0x4599;

/// CRC-15/CAN over a sequence of 0/1 values.
inline std::uint16_t crc15(std::span<const std::uint8_t> bits) {
  std::uint16_t crc = 0;
  for (auto b : bits) {
    const bool next = (b != 0) ^ (((crc >> 14) & 1U) != 0);
    crc = static_cast<std::uint16_t>((crc << 1) & 0x7FFF);
    if (next) crc ^= kCrc15Polynomial;
  }
  return crc;
}

namespace detail {

inline void push_bits(std::vector<std::uint8_t>& out, std::uint32_t value, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((value >> i) & 1U));
}

/// SOF through CRC, unstuffed.
inline std::vector<std::uint8_t> stuffed_region(const CanFrame& f) {
  std::vector<std::uint8_t> bits;
  bits.reserve(34 + 8 * f.dlc);
  bits.push_back(0);  // SOF
  push_bits(bits, f.id, 11);
  bits.push_back(0);  // RTR
  bits.push_back(0);  // IDE
  bits.push_back(0);  // r0
  push_bits(bits, f.dlc, 4);
  for (std::uint8_t i = 0; i < f.dlc; ++i) push_bits(bits, f.data[i], 8);
  push_bits(bits, crc15(bits), 15);
  return bits;
}

}  // namespace detail

/// Fixed-form bits after the CRC: delimiter, ACK slot + delimiter, EOF, IFS.
inline constexpr std::size_t kTrailerBits = 1 + 2 + 7 + 3;

inline constexpr std::size_t nominal_bit_length(std::uint8_t dlc) { return 47 + 8u * dlc; }

inline constexpr std::size_t max_bit_length(std::uint8_t dlc) {
  return nominal_bit_length(dlc) + (33 + 8u * dlc) / 4;
}

/// Full on-wire bit sequence (0 = dominant) from SOF through the interframe space.
inline std::vector<std::uint8_t> serialize_wire_bits(const CanFrame& frame) {
  require_valid(frame);
  const auto raw = detail::stuffed_region(frame);
  std::vector<std::uint8_t> out;
  out.reserve(max_bit_length(frame.dlc));
  int run = 0;
  std::uint8_t last = 2;
  for (auto b : raw) {
    out.push_back(b);
    run = (b == last) ? run + 1 : 1;
    last = b;
    if (run == 5) {
      const auto stuff = static_cast<std::uint8_t>(1 - b);
      out.push_back(stuff);
      last = stuff;
      run = 1;
    }
  }
  out.push_back(1);  // CRC delimiter
  out.push_back(0);  // ACK slot, driven dominant by receivers
  out.push_back(1);  // ACK delimiter
  for (int i = 0; i < 7; ++i) out.push_back(1);  // EOF
  for (int i = 0; i < 3; ++i) out.push_back(1);  // IFS
  return out;
}

inline std::size_t stuff_bit_count(const CanFrame& frame) {
  const auto raw = detail::stuffed_region(frame);
  std::size_t stuffed = 0;
  int run = 0;
  std::uint8_t last = 2;
  for (auto b : raw) {
    run = (b == last) ? run + 1 : 1;
    last = b;
    if (run == 5) {
      ++stuffed;
      last = static_cast<std::uint8_t>(1 - b);
      run = 1;
    }
  }
  return stuffed;
}

inline std::size_t frame_bit_length(const CanFrame& frame) {
  require_valid(frame);
  return nominal_bit_length(frame.dlc) + stuff_bit_count(frame);
}

/// Transmission time in whole microseconds, rounded up.
inline SimTime frame_duration_us(std::size_t bits, std::uint32_t bitrate) {
  const auto num = static_cast<std::uint64_t>(bits) * 1'000'000ULL;
  return static_cast<SimTime>((num + bitrate - 1) / bitrate);
}

inline SimTime bit_time_us(std::uint32_t bitrate) { return frame_duration_us(1, bitrate); }

}  // namespace hackcar
