#pragma once

// Discrete-event CAN bus. Arbitration is resolved at frame granularity:
// among all requests ready at an arbitration instant the lowest identifier
// wins, equal identifiers fall back to (node, seq). Transmission is
// non-preemptive and every completed frame is broadcast to all attached
// nodes, the sender included.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "hackcar/can_core.hpp"

namespace hackcar {

struct BusConfig {
  std::uint32_t bitrate = 500'000;
  /// Receives one candump line per completed frame, as it completes.
  std::function<void(std::string_view)> log_sink;
};

struct TxRequest {
  NodeId node;
  CanFrame frame;
  SimTime ready_time = 0;
  std::uint64_t seq = 0;
};

enum class BusEventKind : std::uint8_t { TxStart, TxComplete, Delivery };

/// For TxStart/TxComplete `node` is the transmitter; for Delivery it is the receiver.
struct BusEvent {
  BusEventKind kind = BusEventKind::TxStart;
  CanFrame frame;
  NodeId node;
  NodeId sender;
  SimTime time = 0;

  friend bool operator==(const BusEvent&, const BusEvent&) = default;
};

/// A frame that finished transmitting.
struct TransmissionRecord {
  CanFrame frame;  // completion_time is set
  NodeId sender;
  SimTime start = 0;
  std::size_t bits = 0;

  SimTime end() const { return *frame.completion_time; }

  friend bool operator==(const TransmissionRecord&, const TransmissionRecord&) = default;
};

struct Delivery {
  const CanFrame& frame;
  NodeId sender;
  SimTime time;
};

using DeliveryHandler = std::function<void(const Delivery&)>;

enum class LogFormat : std::uint8_t { Candump, Csv };

inline LogFormat parse_log_format(std::string_view name) {
  if (name == "candump") return LogFormat::Candump;
  if (name == "csv") return LogFormat::Csv;
  throw Error(Errc::UnsupportedFormat, "unknown log format '" + std::string(name) + "'");
}

namespace detail {

inline std::string hex_payload(const CanFrame& f) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s;
  s.reserve(2 * f.dlc);
  for (std::uint8_t i = 0; i < f.dlc; ++i) {
    s.push_back(kDigits[f.data[i] >> 4]);
    s.push_back(kDigits[f.data[i] & 0xF]);
  }
  return s;
}

inline std::string format_seconds(SimTime t) {
  char buf[48];
  const char* sign = t < 0 ? "-" : "";
  const SimTime a = t < 0 ? -t : t;
  std::snprintf(buf, sizeof buf, "%s%" PRId64 ".%06" PRId64, sign, a / kMicrosPerSecond,
                a % kMicrosPerSecond);
  return buf;
}

inline std::string hex_id(std::uint16_t id) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03X", static_cast<unsigned>(id));
  return buf;
}

}  // namespace detail

inline std::string candump_line(const CanFrame& f) {
  return "(" + detail::format_seconds(f.completion_time.value_or(f.enqueue_time)) + ") vcan0 " +
         detail::hex_id(f.id) + "#" + detail::hex_payload(f);
}

inline std::string format_log(const std::vector<TransmissionRecord>& records, LogFormat format) {
  std::string out;
  if (format == LogFormat::Csv && !records.empty()) {
    out += "time_s,node,id_hex,dlc,payload_hex,bits\n";
  }
  for (const auto& r : records) {
    if (format == LogFormat::Candump) {
      out += candump_line(r.frame);
    } else {
      out += detail::format_seconds(r.end()) + "," + node_name(r.sender) + "," +
             detail::hex_id(r.frame.id) + "," + std::to_string(r.frame.dlc) + "," +
             detail::hex_payload(r.frame) + "," + std::to_string(r.bits);
    }
    out += '\n';
  }
  return out;
}

/// Parses candump lines of the form `(<s.us>) <iface> <ID>#<hex>`.
/// Blank lines are skipped; anything else malformed throws MalformedFrame.
inline std::vector<CanFrame> parse_candump(std::string_view text) {
  std::vector<CanFrame> frames;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty()) continue;

    auto fail = [&](const char* why) {
      throw Error(Errc::MalformedFrame,
                  "candump line " + std::to_string(lineno) + ": " + why);
    };
    if (line.front() != '(') fail("missing timestamp");
    const auto close = line.find(')');
    const auto dot = line.find('.');
    if (close == std::string_view::npos || dot == std::string_view::npos || dot > close) {
      fail("bad timestamp");
    }
    SimTime secs = 0;
    SimTime micros = 0;
    try {
      secs = std::stoll(std::string(line.substr(1, dot - 1)));
      auto frac = std::string(line.substr(dot + 1, close - dot - 1));
      if (frac.empty() || frac.size() > 6) fail("bad timestamp fraction");
      frac.resize(6, '0');
      micros = std::stoll(frac);
    } catch (const std::logic_error&) {
      fail("bad timestamp");
    }
    auto rest = line.substr(close + 1);
    const auto hash = rest.find('#');
    const auto sp = rest.find_last_of(' ', hash);
    if (hash == std::string_view::npos || sp == std::string_view::npos) fail("missing frame");
    const auto id_text = std::string(rest.substr(sp + 1, hash - sp - 1));
    const auto data_text = rest.substr(hash + 1);
    if (id_text.empty() || id_text.size() > 3 || data_text.size() % 2 != 0 ||
        data_text.size() > 16) {
      fail("bad frame body");
    }
    std::array<std::uint8_t, 8> bytes{};
    unsigned long id = 0;
    try {
      id = std::stoul(id_text, nullptr, 16);
      for (std::size_t i = 0; i < data_text.size() / 2; ++i) {
        bytes[i] = static_cast<std::uint8_t>(
            std::stoul(std::string(data_text.substr(2 * i, 2)), nullptr, 16));
      }
    } catch (const std::logic_error&) {
      fail("bad hex");
    }
    auto frame = CanFrame::make(static_cast<std::uint16_t>(id),
                                std::span(bytes.data(), data_text.size() / 2));
    frame.completion_time = secs * kMicrosPerSecond + micros;
    frame.enqueue_time = *frame.completion_time - 1;
    frames.push_back(frame);
  }
  return frames;
}

/// Rebuilds transmission records from logged frames (completion times only).
/// Sender is unknown in a candump log and left as node 0.
inline std::vector<TransmissionRecord> records_from_frames(const std::vector<CanFrame>& frames,
                                                           std::uint32_t bitrate) {
  std::vector<TransmissionRecord> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    TransmissionRecord r;
    r.frame = f;
    r.bits = frame_bit_length(f);
    r.start = *f.completion_time - frame_duration_us(r.bits, bitrate);
    out.push_back(r);
  }
  return out;
}

/// Bits on the wire inside [window_start, window_end) over capacity. A frame
/// straddling a window edge contributes pro rata to its time overlap.
inline double utilization_of(const std::vector<TransmissionRecord>& records,
                             std::uint32_t bitrate, SimTime window_start, SimTime window_end) {
  if (window_end <= window_start) {
    throw Error(Errc::InvalidWindow, "window end must be after window start");
  }
  double bits = 0.0;
  // Records are in completion order, hence also in start order.
  auto it = std::lower_bound(
      records.begin(), records.end(), window_start,
      [](const TransmissionRecord& r, SimTime t) { return r.end() <= t; });
  for (; it != records.end() && it->start < window_end; ++it) {
    const SimTime lo = std::max(it->start, window_start);
    const SimTime hi = std::min(it->end(), window_end);
    if (hi <= lo) continue;
    const SimTime span = it->end() - it->start;
    bits += static_cast<double>(it->bits) * static_cast<double>(hi - lo) /
            static_cast<double>(span);
  }
  const double capacity =
      static_cast<double>(bitrate) * to_seconds(window_end - window_start);
  return std::min(1.0, bits / capacity);
}

class VirtualBus {
 public:
  explicit VirtualBus(BusConfig config = {}) : config_(std::move(config)) {
    if (config_.bitrate == 0) throw ConfigError("bus.bitrate_bps", "must be positive");
  }

  const BusConfig& config() const { return config_; }
  std::uint32_t bitrate() const { return config_.bitrate; }
  SimTime now() const { return now_; }

  void attach(NodeId node, DeliveryHandler on_frame = {}) { nodes_[node] = std::move(on_frame); }

  bool attached(NodeId node) const { return nodes_.contains(node); }

  std::uint64_t request_transmit(NodeId node, CanFrame frame, SimTime ready_time) {
    if (!attached(node)) {
      throw Error(Errc::NotAttached, "node " + node_name(node) + " is not attached");
    }
    require_valid(frame);
    frame.completion_time.reset();
    auto& last = last_ready_[node];
    ready_time = std::max({ready_time, now_, last});
    last = ready_time;
    frame.enqueue_time = ready_time;
    const std::uint64_t seq = next_seq_[node]++;
    pending_.push_back(TxRequest{node, frame, ready_time, seq});
    return seq;
  }

  /// Resolves everything up to `t`. Completions at exactly `t` are delivered;
  /// an arbitration round at exactly `t` is left for the next call so that
  /// requests enqueued at `t` take part in it.
  std::vector<BusEvent> advance_until(SimTime t) {
    if (t < now_) {
      throw Error(Errc::ClockError, "cannot advance from " + std::to_string(now_) + " back to " +
                                        std::to_string(t));
    }
    std::vector<BusEvent> events;
    for (;;) {
      if (current_) {
        if (current_->end() > t) break;
        complete(events);
        continue;
      }
      if (pending_.empty()) break;
      const SimTime earliest =
          std::min_element(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) {
            return a.ready_time < b.ready_time;
          })->ready_time;
      const SimTime instant = std::max(free_at_, earliest);
      if (instant >= t) break;
      start(instant, events);
    }
    now_ = t;
    return events;
  }

  std::size_t pending() const { return pending_.size() + (current_ ? 1 : 0); }

  const std::vector<TransmissionRecord>& transmissions() const { return records_; }

  double utilization(SimTime window_start, SimTime window_end) const {
    return utilization_of(records_, config_.bitrate, window_start, window_end);
  }

  /// Utilization over consecutive `window`-long slices of [0, until).
  std::vector<double> utilization_series(SimTime until, SimTime window = kMicrosPerSecond) const {
    std::vector<double> out;
    for (SimTime a = 0; a + window <= until; a += window) out.push_back(utilization(a, a + window));
    return out;
  }

  std::string export_log(LogFormat format) const { return format_log(records_, format); }
  std::string export_log(std::string_view format) const {
    return export_log(parse_log_format(format));
  }

 private:
  void start(SimTime instant, std::vector<BusEvent>& events) {
    auto best = pending_.end();
    for (auto it = pending_.begin(); it != pending_.end(); ++it) {
      if (it->ready_time > instant) continue;
      if (best == pending_.end() ||
          std::tie(it->frame.id, it->node, it->seq) <
              std::tie(best->frame.id, best->node, best->seq)) {
        best = it;
      }
    }
    TxRequest req = *best;
    pending_.erase(best);
    now_ = instant;

    TransmissionRecord rec;
    rec.frame = req.frame;
    rec.sender = req.node;
    rec.start = instant;
    rec.bits = frame_bit_length(req.frame);
    rec.frame.completion_time = instant + frame_duration_us(rec.bits, config_.bitrate);
    events.push_back({BusEventKind::TxStart, req.frame, req.node, req.node, instant});
    current_ = rec;
  }

  void complete(std::vector<BusEvent>& events) {
    TransmissionRecord rec = *current_;
    current_.reset();
    const SimTime end = rec.end();
    now_ = end;
    free_at_ = end;
    records_.push_back(rec);
    if (config_.log_sink) config_.log_sink(candump_line(rec.frame));
    events.push_back({BusEventKind::TxComplete, rec.frame, rec.sender, rec.sender, end});
    // Handlers may enqueue; copy the frame so the reference stays valid.
    const CanFrame frame = rec.frame;
    for (const auto& [node, handler] : nodes_) {
      events.push_back({BusEventKind::Delivery, frame, node, rec.sender, end});
      if (handler) handler(Delivery{frame, rec.sender, end});
    }
  }

  BusConfig config_;
  std::map<NodeId, DeliveryHandler> nodes_;
  std::map<NodeId, std::uint64_t> next_seq_;
  std::map<NodeId, SimTime> last_ready_;
  std::vector<TxRequest> pending_;
  std::optional<TransmissionRecord> current_;
  std::vector<TransmissionRecord> records_;
  SimTime now_ = 0;
  SimTime free_at_ = 0;
};

}  // namespace hackcar
