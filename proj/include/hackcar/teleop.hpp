#pragma once

// Teleop commands, recorded traces, the command queue drained by the
// scheduler, and the telemetry broadcast read by gateway sessions.

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hackcar/can_core.hpp"
#include "hackcar/ecu_nodes.hpp"

namespace hackcar {

enum class CommandKind : std::uint8_t { Throttle, Steering, Aeb, Mode, Attack };

inline std::string_view to_string(CommandKind k) {
  switch (k) {
    case CommandKind::Throttle: return "throttle";
    case CommandKind::Steering: return "steering";
    case CommandKind::Aeb: return "aeb";
    case CommandKind::Mode: return "mode";
    case CommandKind::Attack: return "attack";
  }
  return "?";
}

/// `value` is a percentage for throttle/steering, and 0/1 for the toggles
/// (aeb off/on, ManualAEB/AutoDrive, attack stop/start).
struct ControlCommand {
  CommandKind kind = CommandKind::Throttle;
  double value = 0.0;
  SimTime time = 0;

  friend bool operator==(const ControlCommand&, const ControlCommand&) = default;

  /// Service message this command travels as, if it is a toggle.
  std::optional<SignalValue> service_signal() const {
    switch (kind) {
      case CommandKind::Aeb: return SignalValue::aeb(value != 0.0);
      case CommandKind::Mode:
        return SignalValue::mode(value != 0.0 ? DriveMode::AutoDrive : DriveMode::ManualAEB);
      case CommandKind::Attack: return SignalValue::attack(value != 0.0);
      default: return std::nullopt;
    }
  }
};

namespace detail {

[[noreturn]] inline void reject(const std::string& why) { throw Error(Errc::CommandRejected, why); }

inline std::optional<CommandKind> parse_command_kind(std::string_view s) {
  for (auto k : {CommandKind::Throttle, CommandKind::Steering, CommandKind::Aeb, CommandKind::Mode,
                 CommandKind::Attack}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Shared value validation for the wire and trace formats.
inline double command_value(CommandKind kind, const nlohmann::json& v) {
  switch (kind) {
    case CommandKind::Throttle:
    case CommandKind::Steering: {
      if (!v.is_number()) reject(std::string(to_string(kind)) + " value must be a number");
      const double x = v.get<double>();
      const double lo = kind == CommandKind::Throttle ? 0.0 : -100.0;
      if (!std::isfinite(x) || x < lo || x > 100.0) {
        reject(std::string(to_string(kind)) + " value out of range");
      }
      return x;
    }
    case CommandKind::Aeb:
      if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
      if (v == "on") return 1.0;
      if (v == "off") return 0.0;
      reject("aeb value must be \"on\" or \"off\"");
    case CommandKind::Mode:
      if (v == "AutoDrive") return 1.0;
      if (v == "ManualAEB") return 0.0;
      reject("mode value must be \"ManualAEB\" or \"AutoDrive\"");
    case CommandKind::Attack:
      if (v == "start") return 1.0;
      if (v == "stop") return 0.0;
      reject("attack value must be \"start\" or \"stop\"");
  }
  reject("unknown command kind");
}

inline std::string command_value_text(const ControlCommand& c) {
  switch (c.kind) {
    case CommandKind::Throttle:
    case CommandKind::Steering: {
      std::ostringstream os;
      os << c.value;
      return os.str();
    }
    case CommandKind::Aeb: return c.value != 0.0 ? "on" : "off";
    case CommandKind::Mode: return c.value != 0.0 ? "AutoDrive" : "ManualAEB";
    case CommandKind::Attack: return c.value != 0.0 ? "start" : "stop";
  }
  return "";
}

}  // namespace detail

/// Parses one client message, e.g. `{"kind":"throttle","value":40}`.
/// Anything malformed or out of range throws CommandRejected.
inline ControlCommand parse_command(std::string_view message, SimTime arrival = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(message);
  } catch (const nlohmann::json::exception& e) {
    detail::reject(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string() || !j.contains("value")) {
    detail::reject("expected {\"kind\": ..., \"value\": ...}");
  }
  const auto kind = detail::parse_command_kind(j["kind"].get<std::string>());
  if (!kind) detail::reject("unknown kind '" + j["kind"].get<std::string>() + "'");
  return ControlCommand{*kind, detail::command_value(*kind, j["value"]), arrival};
}

inline std::string command_json(const ControlCommand& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  if (c.kind == CommandKind::Throttle || c.kind == CommandKind::Steering) {
    j["value"] = c.value;
  } else {
    j["value"] = detail::command_value_text(c);
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Trace files: CSV `time_s,kind,value`

inline std::vector<ControlCommand> parse_trace(std::string_view text) {
  std::vector<ControlCommand> out;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.starts_with('#')) continue;
    if (lineno == 1 && line == "time_s,kind,value") continue;

    auto fail = [&](const std::string& why) -> void {
      throw Error(Errc::TraceError, "trace line " + std::to_string(lineno) + ": " + why);
    };
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) fail("expected time_s,kind,value");
    double t = 0.0;
    try {
      std::size_t used = 0;
      t = std::stod(line.substr(0, c1), &used);
      if (used != c1) fail("bad time");
    } catch (const std::logic_error&) {
      fail("bad time");
    }
    if (!std::isfinite(t) || t < 0) fail("time must be non-negative");
    const auto kind = detail::parse_command_kind(line.substr(c1 + 1, c2 - c1 - 1));
    if (!kind) fail("unknown kind");
    const std::string raw = line.substr(c2 + 1);
    nlohmann::json value;
    if (*kind == CommandKind::Throttle || *kind == CommandKind::Steering) {
      try {
        std::size_t used = 0;
        value = std::stod(raw, &used);
        if (used != raw.size()) fail("bad number");
      } catch (const std::logic_error&) {
        fail("bad number");
      }
    } else {
      value = raw;
    }
    ControlCommand cmd;
    try {
      cmd = ControlCommand{*kind, detail::command_value(*kind, value), from_seconds(t)};
    } catch (const Error& e) {
      fail(e.what());
    }
    if (!out.empty() && cmd.time < out.back().time) fail("trace is not sorted by time");
    out.push_back(cmd);
  }
  return out;
}

inline std::string format_trace(const std::vector<ControlCommand>& commands) {
  std::string out = "time_s,kind,value\n";
  for (const auto& c : commands) {
    out += detail::format_seconds(c.time) + "," + std::string(to_string(c.kind)) + "," +
           detail::command_value_text(c) + "\n";
  }
  return out;
}

/// Many producers (network sessions), one consumer (the scheduler).
class CommandQueue {
 public:
  void push(ControlCommand cmd) {
    std::lock_guard lock(mu_);
    queue_.push_back(cmd);
  }

  /// Removes and returns every command that arrived at or before `t`, in arrival order.
  std::vector<ControlCommand> drain(SimTime t) {
    std::lock_guard lock(mu_);
    std::vector<ControlCommand> out;
    auto keep = queue_.begin();
    for (auto it = queue_.begin(); it != queue_.end(); ++it) {
      if (it->time <= t) {
        out.push_back(*it);
      } else {
        *keep++ = *it;
      }
    }
    queue_.erase(keep, queue_.end());
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  mutable std::mutex mu_;
  std::deque<ControlCommand> queue_;
};

// ---------------------------------------------------------------------------
// Telemetry

struct TelemetryFrame {
  double time_s = 0.0;
  double target_rpm = 0.0;
  double actual_rpm = 0.0;
  double min_range_m = 0.0;
  bool obstacle = false;
  bool attack = false;
  bool collision = false;
  double utilization_1s = 0.0;
  DriveMode mode = DriveMode::AutoDrive;
  bool aeb_enabled = true;

  friend bool operator==(const TelemetryFrame&, const TelemetryFrame&) = default;
};

inline nlohmann::json to_json(const TelemetryFrame& f) {
  return {{"type", "telemetry"},       {"time_s", f.time_s},
          {"target_rpm", f.target_rpm}, {"actual_rpm", f.actual_rpm},
          {"min_range_m", f.min_range_m}, {"obstacle", f.obstacle},
          {"attack", f.attack},         {"collision", f.collision},
          {"utilization_1s", f.utilization_1s}, {"mode", to_string(f.mode)},
          {"aeb_enabled", f.aeb_enabled}};
}

inline nlohmann::json to_json(const DetectorAlert& a) {
  return {{"type", "alert"},
          {"time_s", to_seconds(a.time)},
          {"id_hex", detail::hex_id(a.id)},
          {"reason", a.reason},
          {"observed_ms", a.observed_gap_ms},
          {"expected_ms", a.expected_gap_ms}};
}

inline nlohmann::json event_json(std::string_view name, SimTime t) {
  return {{"type", "event"}, {"name", name}, {"time_s", to_seconds(t)}};
}

/// Latest-snapshot handoff from the scheduler to any number of readers,
/// plus a bounded outbound message log that sessions consume by cursor.
class TelemetryBroadcast {
 public:
  static constexpr std::size_t kMaxMessages = 20'000;
  static constexpr double kHistorySeconds = 60.0;

  void publish(const TelemetryFrame& frame) {
    std::lock_guard lock(mu_);
    latest_ = frame;
    ++cycles_;
    cv_.notify_all();
  }

  /// Appends a server->client message (telemetry at 10 Hz, alerts, events).
  void post(nlohmann::json message) {
    std::lock_guard lock(mu_);
    if (message.value("type", "") == "telemetry") {
      history_.push_back(message);
      const double now = message.value("time_s", 0.0);
      while (!history_.empty() &&
             history_.front().value("time_s", 0.0) < now - kHistorySeconds) {
        history_.pop_front();
      }
    }
    messages_.emplace_back(next_seq_++, message.dump());
    while (messages_.size() > kMaxMessages) messages_.pop_front();
    cv_.notify_all();
  }

  TelemetryFrame snapshot() const {
    std::lock_guard lock(mu_);
    if (!latest_) throw Error(Errc::NotRunning, "no control cycle has completed yet");
    return *latest_;
  }

  std::uint64_t cycles() const {
    std::lock_guard lock(mu_);
    return cycles_;
  }

  /// Telemetry messages from the last 60 s, oldest first.
  std::vector<std::string> history() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& m : history_) out.push_back(m.dump());
    return out;
  }

  std::uint64_t cursor() const {
    std::lock_guard lock(mu_);
    return next_seq_;
  }

  /// Messages with sequence >= cursor; advances the cursor.
  std::vector<std::string> messages_since(std::uint64_t& cursor) const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [seq, text] : messages_) {
      if (seq >= cursor) out.push_back(text);
    }
    cursor = next_seq_;
    return out;
  }

  /// Blocks until a message past `cursor` exists or the timeout expires.
  template <class Duration>
  void wait_for_messages(std::uint64_t cursor, Duration timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return next_seq_ > cursor || closed_; });
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::optional<TelemetryFrame> latest_;
  std::uint64_t cycles_ = 0;
  std::deque<nlohmann::json> history_;
  std::deque<std::pair<std::uint64_t, std::string>> messages_;
  std::uint64_t next_seq_ = 0;
  bool closed_ = false;
};

}  // namespace hackcar
