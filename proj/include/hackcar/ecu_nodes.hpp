#pragma once

// The virtual ECUs. Each node reacts to delivered frames and, where it has a
// period, to ticks. Hooks return the frames the node wants to transmit and
// leave bus access to the scheduler.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hackcar/can_core.hpp"
#include "hackcar/pure_pursuit.hpp"
#include "hackcar/vehicle_plant.hpp"
#include "hackcar/virtual_bus.hpp"

namespace hackcar {

/// Node state driven by the 0x500/0x501/0x502 service messages.
struct ServiceState {
  DriveMode mode = DriveMode::AutoDrive;
  bool aeb_enabled = true;
  bool attack_active = false;
  std::uint64_t warnings = 0;

  friend bool operator==(const ServiceState&, const ServiceState&) = default;
};

/// Applies a service frame. Returns false if the frame is not a valid
/// service message (non-service id, wrong dlc, or a payload outside the enum);
/// invalid enum payloads also bump `warnings`.
inline bool handle_service(const CanFrame& frame, ServiceState& state,
                           const Catalog& catalog = Catalog::hackcar()) {
  const auto* msg = catalog.find(frame.id);
  if (msg == nullptr) return false;
  if (msg->kind != SignalKind::Mode && msg->kind != SignalKind::Aeb &&
      msg->kind != SignalKind::Attack) {
    return false;
  }
  SignalValue v;
  try {
    v = decode_frame(frame, *msg);
  } catch (const Error&) {
    ++state.warnings;
    return false;
  }
  if (!v.enum_in_range()) {
    ++state.warnings;
    return false;
  }
  switch (v.kind) {
    case SignalKind::Mode: state.mode = static_cast<DriveMode>(v.value); break;
    case SignalKind::Aeb: state.aeb_enabled = v.value == 1; break;
    case SignalKind::Attack: state.attack_active = v.value == 1; break;
    default: break;
  }
  return true;
}

inline CanFrame service_frame(SignalValue value, SimTime t,
                              const Catalog& catalog = Catalog::hackcar()) {
  const auto* msg = catalog.find_kind(value.kind);
  if (msg == nullptr) {
    throw Error(Errc::CatalogMismatch, "no service message for this signal kind");
  }
  return encode_frame(*msg, value, t);
}

// ---------------------------------------------------------------------------
// SSC

struct SscConfig {
  double cruise_rpm = 6000.0;
  double aeb_threshold_m = 0.5;
  double aeb_cone_deg = 15.0;
  double max_rpm = 8000.0;       // full teleop throttle
  double max_steer_rad = 0.4;    // full teleop steering
  PurePursuit tracker;
};

/// Sensing system controller: owns the LiDAR view and the route, produces
/// RPM/STEERING/BREAK every control period.
class SensingController {
 public:
  explicit SensingController(SscConfig config = {}, Catalog catalog = Catalog::hackcar())
      : config_(config), catalog_(std::move(catalog)) {}

  const SscConfig& config() const { return config_; }
  ServiceState& service() { return service_; }
  const ServiceState& service() const { return service_; }

  void set_route(std::vector<Vec2> route) { route_ = std::move(route); }

  void on_scan(const LidarScan& scan) {
    forward_range_ = min_forward_range(scan, config_.aeb_cone_deg);
    have_scan_ = true;
  }

  /// Pose from localization, used by the route tracker.
  void on_pose(Vec2 pos, double heading) {
    pos_ = pos;
    heading_ = heading;
  }

  void set_teleop(double throttle_pct, double steering_pct) {
    throttle_pct_ = throttle_pct;
    steering_pct_ = steering_pct;
  }

  void on_frame(const Delivery& d) { handle_service(d.frame, service_, catalog_); }

  /// Latest forward range, or max range before the first scan.
  double forward_range() const { return have_scan_ ? forward_range_ : 10.0; }

  bool obstacle_detected() const { return forward_range() < config_.aeb_threshold_m; }

  bool aeb_engaged() const { return service_.aeb_enabled && obstacle_detected(); }

  std::vector<CanFrame> tick(SimTime t) const {
    double rpm = config_.cruise_rpm;
    double steer = 0.0;
    if (service_.mode == DriveMode::AutoDrive) {
      if (route_.size() >= 2) steer = config_.tracker.steer(pos_, heading_, route_);
    } else {
      rpm = throttle_pct_ / 100.0 * config_.max_rpm;
      steer = steering_pct_ / 100.0 * config_.max_steer_rad;
    }
    int brake = 0;
    if (aeb_engaged()) {
      rpm = 0.0;
      brake = 255;
    }
    return {
        encode_frame(catalog_.at(ids::rpm), SignalValue::rpm(std::llround(rpm)), t),
        encode_frame(catalog_.at(ids::steering),
                     SignalValue::steering_mrad(std::llround(steer * 1000.0)), t),
        encode_frame(catalog_.at(ids::brake), SignalValue::brake(brake), t),
    };
  }

 private:
  SscConfig config_;
  Catalog catalog_;
  ServiceState service_;
  std::vector<Vec2> route_;
  Vec2 pos_;
  double heading_ = 0.0;
  double forward_range_ = 10.0;
  bool have_scan_ = false;
  double throttle_pct_ = 0.0;
  double steering_pct_ = 0.0;
};

// ---------------------------------------------------------------------------
// MCU

struct McuConfig {
  double max_rpm = 8000.0;
  double max_steer_rad = 0.4;
};

struct McuState {
  DriveMode mode = DriveMode::AutoDrive;
  bool aeb_enabled = true;
  std::int64_t last_rpm_cmd = 0;
  std::int64_t last_steering_cmd = 0;  // milliradians
  std::int64_t last_brake_cmd = 0;
  std::uint64_t malformed = 0;

  friend bool operator==(const McuState&, const McuState&) = default;
};

/// Main controller: last-writer-wins over the command frames, drives the plant.
class MainController {
 public:
  explicit MainController(McuConfig config = {}, Catalog catalog = Catalog::hackcar())
      : config_(config), catalog_(std::move(catalog)) {}

  const McuState& state() const { return state_; }
  const ServiceState& service() const { return service_; }

  void set_teleop(double throttle_pct, double steering_pct) {
    throttle_pct_ = throttle_pct;
    steering_pct_ = steering_pct;
  }

  void handle(const CanFrame& frame) {
    const auto* msg = catalog_.find(frame.id);
    if (msg == nullptr) return;
    SignalValue v;
    try {
      v = decode_frame(frame, *msg);
    } catch (const Error&) {
      ++state_.malformed;
      return;
    }
    switch (v.kind) {
      case SignalKind::Rpm: state_.last_rpm_cmd = v.value; break;
      case SignalKind::Steering: state_.last_steering_cmd = v.value; break;
      case SignalKind::Brake: state_.last_brake_cmd = v.value; break;
      case SignalKind::Mode:
      case SignalKind::Aeb:
        handle_service(frame, service_, catalog_);
        state_.mode = service_.mode;
        state_.aeb_enabled = service_.aeb_enabled;
        break;
      default: break;
    }
  }

  void on_frame(const Delivery& d) { handle(d.frame); }

  /// In AutoDrive the RPM/STEERING frames drive the plant directly. In
  /// ManualAEB teleop sets speed and steering and any BREAK > 0 zeroes the
  /// speed target.
  Actuation actuate() const {
    Actuation a;
    a.brake_effort = static_cast<int>(std::clamp<std::int64_t>(state_.last_brake_cmd, 0, 255));
    if (state_.mode == DriveMode::AutoDrive) {
      a.target_rpm = static_cast<double>(state_.last_rpm_cmd);
      a.steering_rad = static_cast<double>(state_.last_steering_cmd) / 1000.0;
    } else {
      a.target_rpm = a.brake_effort > 0 ? 0.0 : throttle_pct_ / 100.0 * config_.max_rpm;
      a.steering_rad = steering_pct_ / 100.0 * config_.max_steer_rad;
    }
    return a;
  }

 private:
  McuConfig config_;
  Catalog catalog_;
  McuState state_;
  ServiceState service_;
  double throttle_pct_ = 0.0;
  double steering_pct_ = 0.0;
};

// ---------------------------------------------------------------------------
// Attacker

struct AttackerConfig {
  std::uint16_t target_id = ids::rpm;
  std::int64_t malicious_value = 6000;
  bool active = false;
};

/// Overwrite attacker: answers each legitimate target-id frame with one
/// forged frame one bit time after it completes.
class Attacker {
 public:
  explicit Attacker(AttackerConfig config = {}, std::uint32_t bitrate = 500'000,
                    Catalog catalog = Catalog::hackcar())
      : config_(config), bitrate_(bitrate), catalog_(std::move(catalog)) {
    service_.attack_active = config_.active;
  }

  bool active() const { return service_.attack_active; }
  void set_active(bool on) { service_.attack_active = on; }
  const AttackerConfig& config() const { return config_; }
  std::uint64_t injections() const { return injections_; }
  const ServiceState& service() const { return service_; }

  std::optional<TxRequest> observe(const Delivery& d) {
    if (d.frame.id == ids::attack) {
      handle_service(d.frame, service_, catalog_);
      return std::nullopt;
    }
    if (!service_.attack_active || d.frame.id != config_.target_id || d.sender == nodes::attacker) {
      return std::nullopt;
    }
    const auto& msg = catalog_.at(config_.target_id);
    const SimTime ready = d.time + bit_time_us(bitrate_);
    TxRequest req;
    req.node = nodes::attacker;
    req.frame = encode_frame(msg, SignalValue{msg.kind, config_.malicious_value}, ready);
    req.ready_time = ready;
    ++injections_;
    return req;
  }

 private:
  AttackerConfig config_;
  std::uint32_t bitrate_;
  Catalog catalog_;
  ServiceState service_;
  std::uint64_t injections_ = 0;
};

// ---------------------------------------------------------------------------
// Detector

struct DetectorAlert {
  SimTime time = 0;
  std::uint16_t id = 0;
  std::string reason = "inter-arrival-anomaly";
  double observed_gap_ms = 0.0;
  double expected_gap_ms = 0.0;

  friend bool operator==(const DetectorAlert&, const DetectorAlert&) = default;
};

struct DetectorConfig {
  double low_factor = 0.5;
  double high_factor = 1.5;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// Frequency baseline: flags periodic ids whose inter-arrival gap leaves
/// [low_factor, high_factor] x period.
class Detector {
 public:
  explicit Detector(DetectorConfig config = {}, Catalog catalog = Catalog::hackcar())
      : config_(config), catalog_(std::move(catalog)) {}

  std::optional<DetectorAlert> observe(const Delivery& d) {
    const auto* msg = catalog_.find(d.frame.id);
    if (msg == nullptr || !msg->period_ms) return std::nullopt;
    auto [it, first] = last_seen_.try_emplace(d.frame.id, d.time);
    if (first) return std::nullopt;
    const double gap_ms = static_cast<double>(d.time - it->second) / 1000.0;
    it->second = d.time;
    const double period = *msg->period_ms;
    if (gap_ms >= config_.low_factor * period && gap_ms <= config_.high_factor * period) {
      return std::nullopt;
    }
    DetectorAlert alert{d.time, d.frame.id, "inter-arrival-anomaly", gap_ms, period};
    alerts_.push_back(alert);
    return alert;
  }

  const std::vector<DetectorAlert>& alerts() const { return alerts_; }

 private:
  DetectorConfig config_;
  Catalog catalog_;
  std::map<std::uint16_t, SimTime> last_seen_;
  std::vector<DetectorAlert> alerts_;
};

inline std::string alerts_csv(const std::vector<DetectorAlert>& alerts) {
  std::string out = "time_s,id_hex,reason,observed_ms,expected_ms\n";
  char buf[160];
  for (const auto& a : alerts) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.3f,%.3f\n", detail::format_seconds(a.time).c_str(),
                  detail::hex_id(a.id).c_str(), a.reason.c_str(), a.observed_gap_ms,
                  a.expected_gap_ms);
    out += buf;
  }
  return out;
}

}  // namespace hackcar
