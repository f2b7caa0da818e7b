#pragma once

// Scenario configuration, the co-simulation loop and run metrics.
//
// One control cycle is 10 ms. At each cycle boundary t the scheduler
//   1. resolves the bus up to t (deliveries reach the nodes),
//   2. applies teleop commands that arrived by t and scheduled attack toggles,
//   3. samples the MCU actuation,
//   4. lets the SSC emit RPM/STEERING/BREAK with ready time t,
//   5. records telemetry,
// then integrates the plant in 1 ms steps, taking a LiDAR scan every 25 ms.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "json.hpp"

#include "hackcar/can_core.hpp"
#include "hackcar/ecu_nodes.hpp"
#include "hackcar/pure_pursuit.hpp"
#include "hackcar/teleop.hpp"
#include "hackcar/vehicle_plant.hpp"
#include "hackcar/virtual_bus.hpp"

namespace hackcar {

inline constexpr SimTime kControlPeriod = 10 * kMicrosPerMilli;
inline constexpr SimTime kPlantStep = 1 * kMicrosPerMilli;

struct AttackSchedule {
  bool enabled = false;
  double start_s = 0.0;
  double stop_s = 0.0;
  std::int64_t malicious_rpm = 6000;
  std::uint16_t target_id = ids::rpm;

  friend bool operator==(const AttackSchedule&, const AttackSchedule&) = default;
};

/// Wall placed across the route so that, at cruise speed, the forward range
/// drops below the AEB threshold `detect_at_s` seconds after the start.
struct AutoObstacle {
  double detect_at_s = 30.0;
  double width_m = 2.0;
  double depth_m = 0.2;

  friend bool operator==(const AutoObstacle&, const AutoObstacle&) = default;
};

enum class TeleopSource : std::uint8_t { None, Trace, Live };

struct ScenarioConfig {
  DriveMode mode = DriveMode::AutoDrive;
  double duration_s = 0.0;
  World world;
  std::optional<AutoObstacle> auto_obstacle;
  Vec2 start_pos;
  double start_heading_rad = 0.0;
  double cruise_rpm = 6000.0;
  double max_rpm = 8000.0;
  double aeb_threshold_m = 0.5;
  double aeb_cone_deg = 15.0;
  bool aeb_enabled = true;
  double lookahead_m = 0.6;
  AttackSchedule attack;
  std::uint32_t bitrate = 500'000;
  std::uint64_t seed = 0;
  TeleopSource teleop = TeleopSource::None;
  std::string trace_file;
  std::vector<ControlCommand> trace;
  VehicleParams vehicle;
  LidarConfig lidar;
  DetectorConfig detector;
  Catalog catalog = Catalog::hackcar();

  SimTime duration() const { return from_seconds(duration_s); }

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

// ---------------------------------------------------------------------------
// Loading

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected a mapping");
    }
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  bool has(const std::string& k) const { return node_ && node_.IsMap() && node_[k]; }

  YAML::Node raw(const std::string& k) const {
    used_.insert(k);
    return has(k) ? node_[k] : YAML::Node();
  }

  template <class T>
  T get(const std::string& k, T fallback) const {
    used_.insert(k);
    if (!has(k)) return fallback;
    return as<T>(node_[k], key(k));
  }

  template <class T>
  T require(const std::string& k) const {
    used_.insert(k);
    if (!has(k)) throw ConfigError(key(k), "required key missing");
    return as<T>(node_[k], key(k));
  }

  ConfigReader section(const std::string& k) const {
    used_.insert(k);
    return ConfigReader(has(k) ? node_[k] : YAML::Node(), key(k));
  }

  void reject_unknown() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto name = kv.first.as<std::string>();
      if (!used_.contains(name)) throw ConfigError(key(name), "unknown key");
    }
  }

  template <class T>
  static T as(const YAML::Node& n, const std::string& where) {
    try {
      if (!n.IsScalar()) throw ConfigError(where, "expected a scalar");
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where, "wrong type");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  mutable std::set<std::string> used_;
};

inline Vec2 read_point(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError(where, "expected [x_m, y_m]");
  return {ConfigReader::as<double>(n[0], where), ConfigReader::as<double>(n[1], where)};
}

inline std::vector<double> read_numbers(const YAML::Node& n, std::size_t count,
                                        const std::string& where) {
  if (!n.IsSequence() || n.size() != count) {
    throw ConfigError(where, "expected " + std::to_string(count) + " numbers");
  }
  std::vector<double> out;
  for (const auto& v : n) out.push_back(ConfigReader::as<double>(v, where));
  return out;
}

inline std::vector<Obstacle> read_obstacles(const YAML::Node& n) {
  std::vector<Obstacle> out;
  if (!n || n.IsNull()) return out;
  if (!n.IsSequence()) throw ConfigError("obstacles", "expected a list");
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string where = "obstacles[" + std::to_string(i) + "]";
    ConfigReader r(n[i], where);
    if (r.has("box_m")) {
      const auto v = read_numbers(r.raw("box_m"), 4, r.key("box_m"));
      if (v[2] < v[0] || v[3] < v[1]) {
        throw ConfigError(r.key("box_m"), "expected [x_min, y_min, x_max, y_max]");
      }
      out.emplace_back(Box{{v[0], v[1]}, {v[2], v[3]}});
    } else if (r.has("segment_m")) {
      const auto v = read_numbers(r.raw("segment_m"), 4, r.key("segment_m"));
      out.emplace_back(Segment{{v[0], v[1]}, {v[2], v[3]}});
    } else {
      throw ConfigError(where, "expected box_m or segment_m");
    }
    r.reject_unknown();
  }
  return out;
}

inline std::vector<CatalogMessage> read_catalog(const YAML::Node& n) {
  std::vector<CatalogMessage> out;
  if (!n || n.IsNull()) return out;
  if (!n.IsSequence()) throw ConfigError("catalog", "expected a list");
  for (std::size_t i = 0; i < n.size(); ++i) {
    ConfigReader r(n[i], "catalog[" + std::to_string(i) + "]");
    CatalogMessage m;
    m.name = r.require<std::string>("name");
    const auto id = r.require<int>("id");
    if (id < 0 || id > kMaxStandardId) throw ConfigError(r.key("id"), "must fit in 11 bits");
    m.id = static_cast<std::uint16_t>(id);
    const auto dlc = r.require<int>("dlc");
    if (dlc < 0 || dlc > kMaxDlc) throw ConfigError(r.key("dlc"), "must be 0..8");
    m.dlc = static_cast<std::uint8_t>(dlc);
    if (r.has("period_ms")) m.period_ms = r.require<int>("period_ms");
    const auto producer = parse_node_name(r.get<std::string>("producer", "gateway"));
    if (!producer) throw ConfigError(r.key("producer"), "unknown node");
    m.producer = *producer;
    const auto kind = parse_signal_kind(r.get<std::string>("kind", "raw"));
    if (!kind) throw ConfigError(r.key("kind"), "unknown signal kind");
    m.kind = *kind;
    m.encoding.width = static_cast<std::uint8_t>(r.get<int>("width_bytes", m.dlc));
    m.encoding.is_signed = r.get<bool>("signed", false);
    const auto order = r.get<std::string>("byte_order", "little");
    if (order != "little" && order != "big") throw ConfigError(r.key("byte_order"), "little|big");
    m.encoding.order = order == "little" ? ByteOrder::Little : ByteOrder::Big;
    m.encoding.scale = r.get<double>("scale", 1.0);
    if (!(m.encoding.scale > 0)) throw ConfigError(r.key("scale"), "must be positive");
    m.encoding.unit = r.get<std::string>("unit", "");
    const int bits = 8 * m.encoding.width;
    const std::int64_t lo_default =
        m.encoding.is_signed ? -(std::int64_t{1} << std::min(bits - 1, 62)) : 0;
    const std::int64_t hi_default =
        m.encoding.is_signed ? (std::int64_t{1} << std::min(bits - 1, 62)) - 1
                             : (bits >= 63 ? std::numeric_limits<std::int64_t>::max()
                                           : (std::int64_t{1} << bits) - 1);
    m.encoding.min = r.get<std::int64_t>("min", lo_default);
    m.encoding.max = r.get<std::int64_t>("max", hi_default);
    r.reject_unknown();
    out.push_back(m);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::TraceError, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Wall across the route ahead of the start pose (see AutoObstacle).
inline Box place_auto_obstacle(const ScenarioConfig& c, const AutoObstacle& a) {
  const Vec2 dir = c.world.route.size() >= 2
                       ? (1.0 / norm(c.world.route[1] - c.world.route[0])) *
                             (c.world.route[1] - c.world.route[0])
                       : Vec2{std::cos(c.start_heading_rad), std::sin(c.start_heading_rad)};
  const double cruise_speed = c.cruise_rpm * c.vehicle.k_v;
  const double dist = c.vehicle.lidar_offset_m + cruise_speed * a.detect_at_s + c.aeb_threshold_m;
  const Vec2 near_center = c.start_pos + dist * dir;
  const Vec2 far_center = c.start_pos + (dist + a.depth_m) * dir;
  const Vec2 side{-dir.y, dir.x};
  const Vec2 p[4] = {near_center + (a.width_m / 2) * side, near_center - (a.width_m / 2) * side,
                     far_center + (a.width_m / 2) * side, far_center - (a.width_m / 2) * side};
  Box b{p[0], p[0]};
  for (const auto& q : p) {
    b.min = {std::min(b.min.x, q.x), std::min(b.min.y, q.y)};
    b.max = {std::max(b.max.x, q.x), std::max(b.max.y, q.y)};
  }
  return b;
}

/// Parses and validates a YAML scenario. Relative trace paths resolve against `base_dir`.
inline ScenarioConfig load_scenario(std::string_view text,
                                    const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("<root>", std::string("not valid YAML: ") + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError("<root>", "empty scenario");
  detail::ConfigReader r(root, "");
  ScenarioConfig c;

  const auto mode = parse_drive_mode(r.get<std::string>("mode", "AutoDrive"));
  if (!mode) throw ConfigError("mode", "expected ManualAEB or AutoDrive");
  c.mode = *mode;
  c.duration_s = r.require<double>("duration_s");
  if (!(c.duration_s > 0) || !std::isfinite(c.duration_s)) {
    throw ConfigError("duration_s", "must be positive");
  }
  c.seed = r.get<std::uint64_t>("seed", 0);
  c.cruise_rpm = r.get<double>("cruise_rpm", 6000.0);
  if (c.cruise_rpm < 0) throw ConfigError("cruise_rpm", "must be non-negative");
  c.max_rpm = r.get<double>("max_rpm", 8000.0);
  c.aeb_threshold_m = r.get<double>("aeb_threshold_m", 0.5);
  if (!(c.aeb_threshold_m > 0)) throw ConfigError("aeb_threshold_m", "must be positive");
  c.aeb_cone_deg = r.get<double>("aeb_cone_deg", 15.0);
  if (!(c.aeb_cone_deg > 0 && c.aeb_cone_deg <= 135)) {
    throw ConfigError("aeb_cone_deg", "must be in (0, 135]");
  }
  c.aeb_enabled = r.get<bool>("aeb_enabled", true);
  c.lookahead_m = r.get<double>("lookahead_m", 0.6);
  if (!(c.lookahead_m > 0)) throw ConfigError("lookahead_m", "must be positive");

  if (auto route = r.raw("route"); route && !route.IsNull()) {
    if (!route.IsSequence()) throw ConfigError("route", "expected a list of [x_m, y_m]");
    for (std::size_t i = 0; i < route.size(); ++i) {
      c.world.route.push_back(detail::read_point(route[i], "route[" + std::to_string(i) + "]"));
    }
  }
  if (c.mode == DriveMode::AutoDrive && c.world.route.size() < 2) {
    throw ConfigError("route", "AutoDrive needs at least two waypoints");
  }
  for (std::size_t i = 0; i + 1 < c.world.route.size(); ++i) {
    if (norm(c.world.route[i + 1] - c.world.route[i]) <= 0) {
      throw ConfigError("route[" + std::to_string(i + 1) + "]", "duplicate waypoint");
    }
  }

  {
    auto start = r.section("start");
    if (!c.world.route.empty()) {
      c.start_pos = c.world.route.front();
      if (c.world.route.size() >= 2) {
        const Vec2 d = c.world.route[1] - c.world.route[0];
        c.start_heading_rad = std::atan2(d.y, d.x);
      }
    }
    c.start_pos.x = start.get<double>("x_m", c.start_pos.x);
    c.start_pos.y = start.get<double>("y_m", c.start_pos.y);
    c.start_heading_rad =
        deg_to_rad(start.get<double>("heading_deg", rad_to_deg(c.start_heading_rad)));
    start.reject_unknown();
  }

  {
    auto v = r.section("vehicle");
    auto& p = c.vehicle;
    p.k_v = v.get<double>("k_v_mps_per_rpm", p.k_v);
    p.wheelbase_m = v.get<double>("wheelbase_m", p.wheelbase_m);
    p.max_steer_rad = deg_to_rad(v.get<double>("max_steer_deg", rad_to_deg(p.max_steer_rad)));
    p.motor_tau_s = v.get<double>("motor_tau_s", p.motor_tau_s);
    p.kp = v.get<double>("kp", p.kp);
    p.ki = v.get<double>("ki_per_s", p.ki);
    p.drive_max_rpm = v.get<double>("drive_max_rpm", p.drive_max_rpm);
    p.brake_decel_rpm_s = v.get<double>("brake_decel_rpm_per_s", p.brake_decel_rpm_s);
    p.lidar_offset_m = v.get<double>("lidar_offset_m", p.lidar_offset_m);
    p.front_overhang_m = v.get<double>("front_overhang_m", p.front_overhang_m);
    p.rear_overhang_m = v.get<double>("rear_overhang_m", p.rear_overhang_m);
    p.width_m = v.get<double>("width_m", p.width_m);
    if (!(p.motor_tau_s > 0)) throw ConfigError(v.key("motor_tau_s"), "must be positive");
    if (!(p.wheelbase_m > 0)) throw ConfigError(v.key("wheelbase_m"), "must be positive");
    if (!(p.k_v > 0)) throw ConfigError(v.key("k_v_mps_per_rpm"), "must be positive");
    v.reject_unknown();
  }

  {
    auto l = r.section("lidar");
    c.lidar.noise_sigma_m = l.get<double>("noise_sigma_m", 0.0);
    if (c.lidar.noise_sigma_m < 0) throw ConfigError(l.key("noise_sigma_m"), "must be >= 0");
    l.reject_unknown();
  }

  c.world.obstacles = detail::read_obstacles(r.raw("obstacles"));

  if (r.has("auto_obstacle")) {
    auto a = r.section("auto_obstacle");
    AutoObstacle ao;
    ao.detect_at_s = a.get<double>("detect_at_s", ao.detect_at_s);
    ao.width_m = a.get<double>("width_m", ao.width_m);
    ao.depth_m = a.get<double>("depth_m", ao.depth_m);
    if (!(ao.detect_at_s > 0)) throw ConfigError(a.key("detect_at_s"), "must be positive");
    if (!(ao.width_m > 0) || !(ao.depth_m > 0)) throw ConfigError(a.key("width_m"), "bad size");
    a.reject_unknown();
    c.auto_obstacle = ao;
    c.world.obstacles.emplace_back(place_auto_obstacle(c, ao));
  }

  if (r.has("attack")) {
    auto a = r.section("attack");
    c.attack.enabled = a.get<bool>("enabled", true);
    c.attack.start_s = a.get<double>("start_s", 0.0);
    c.attack.stop_s = a.get<double>("stop_s", c.duration_s);
    c.attack.malicious_rpm = a.get<std::int64_t>("malicious_rpm", 6000);
    const auto target = a.get<int>("target_id", ids::rpm);
    if (target < 0 || target > kMaxStandardId) {
      throw ConfigError(a.key("target_id"), "must fit in 11 bits");
    }
    c.attack.target_id = static_cast<std::uint16_t>(target);
    if (c.attack.start_s < 0) throw ConfigError(a.key("start_s"), "must be non-negative");
    if (c.attack.start_s > c.duration_s) throw ConfigError(a.key("start_s"), "after duration_s");
    if (c.attack.stop_s > c.duration_s) throw ConfigError(a.key("stop_s"), "after duration_s");
    if (!(c.attack.start_s < c.attack.stop_s)) {
      throw ConfigError(a.key("stop_s"), "must be after start_s");
    }
    a.reject_unknown();
  }

  {
    auto b = r.section("bus");
    const auto bitrate = b.get<std::int64_t>("bitrate_bps", 500'000);
    if (bitrate <= 0 || bitrate > 10'000'000) {
      throw ConfigError(b.key("bitrate_bps"), "must be in (0, 10 Mbit/s]");
    }
    c.bitrate = static_cast<std::uint32_t>(bitrate);
    b.reject_unknown();
  }

  {
    auto d = r.section("detector");
    c.detector.low_factor = d.get<double>("low_factor", 0.5);
    c.detector.high_factor = d.get<double>("high_factor", 1.5);
    if (!(c.detector.low_factor < c.detector.high_factor)) {
      throw ConfigError(d.key("high_factor"), "must exceed low_factor");
    }
    d.reject_unknown();
  }

  if (r.has("teleop")) {
    auto t = r.raw("teleop");
    if (t.IsScalar()) {
      const auto v = t.as<std::string>();
      if (v == "none") {
        c.teleop = TeleopSource::None;
      } else if (v == "live") {
        c.teleop = TeleopSource::Live;
      } else {
        throw ConfigError("teleop", "expected none, live or {trace: file}");
      }
    } else {
      detail::ConfigReader tr(t, "teleop");
      c.trace_file = tr.require<std::string>("trace");
      tr.reject_unknown();
      c.teleop = TeleopSource::Trace;
      auto path = std::filesystem::path(c.trace_file);
      if (path.is_relative()) path = base_dir / path;
      try {
        c.trace = parse_trace(detail::read_file(path));
      } catch (const Error& e) {
        throw ConfigError("teleop.trace", e.what());
      }
    }
  }

  if (r.has("catalog")) {
    try {
      c.catalog.merge(detail::read_catalog(r.raw("catalog")));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("catalog", e.what());
    }
  }

  r.reject_unknown();
  return c;
}

inline ScenarioConfig load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Telemetry and metrics

struct TelemetryRecord {
  SimTime time = 0;
  double target_rpm = 0.0;
  double actual_rpm = 0.0;
  double min_range_m = 0.0;
  bool obstacle = false;
  bool attack = false;
  bool collision = false;

  double time_s() const { return to_seconds(time); }

  friend bool operator==(const TelemetryRecord&, const TelemetryRecord&) = default;
};

/// Undefined metrics are empty optionals, never zero.
struct RunSummary {
  bool stopped = false;
  std::optional<double> stop_latency_s;
  bool collided = false;
  std::optional<double> detection_time_s;
  std::optional<double> settled_time_s;
  std::optional<double> rpm_variance_pre;
  std::optional<double> rpm_variance_attack;
  std::optional<double> rpm_mean_attack;

  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

namespace detail {

inline std::optional<double> variance_of(const std::vector<TelemetryRecord>& t, std::size_t lo,
                                         std::size_t hi) {
  if (hi <= lo) return std::nullopt;
  double mean = 0.0;
  for (std::size_t i = lo; i < hi; ++i) mean += t[i].actual_rpm;
  mean /= static_cast<double>(hi - lo);
  double var = 0.0;
  for (std::size_t i = lo; i < hi; ++i) var += (t[i].actual_rpm - mean) * (t[i].actual_rpm - mean);
  return var / static_cast<double>(hi - lo);
}

}  // namespace detail

/// Stop latency: first obstacle detection to actual rpm below 1% of cruise.
/// Cruise window: from the point after which rpm stays within +/-2% of cruise
/// until detection. Attack window: detection to the end of the run.
inline RunSummary attack_effect_metrics(const std::vector<TelemetryRecord>& telemetry,
                                        double cruise_rpm) {
  if (telemetry.empty()) throw Error(Errc::InvalidWindow, "empty telemetry");
  RunSummary s;
  const std::size_t n = telemetry.size();
  std::size_t det = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (telemetry[i].obstacle) {
      det = i;
      break;
    }
  }
  for (const auto& r : telemetry) s.collided = s.collided || r.collision;

  if (det < n) {
    s.detection_time_s = telemetry[det].time_s();
    for (std::size_t i = det; i < n; ++i) {
      if (telemetry[i].actual_rpm < 0.01 * cruise_rpm) {
        s.stop_latency_s = to_seconds(telemetry[i].time - telemetry[det].time);
        break;
      }
    }
  }
  s.stopped = s.stop_latency_s.has_value();

  // Scan backwards from detection for the last sample outside the band.
  const double band = 0.02 * cruise_rpm;
  std::optional<std::size_t> settled;
  if (det > 0 && cruise_rpm > 0) {
    std::size_t first_in = det;
    for (std::size_t i = det; i-- > 0;) {
      if (std::abs(telemetry[i].actual_rpm - cruise_rpm) > band) break;
      first_in = i;
    }
    if (first_in < det) settled = first_in;
  }
  if (settled) {
    s.settled_time_s = telemetry[*settled].time_s();
    s.rpm_variance_pre = detail::variance_of(telemetry, *settled, det);
  }
  if (det < n) {
    s.rpm_variance_attack = detail::variance_of(telemetry, det, n);
    double mean = 0.0;
    for (std::size_t i = det; i < n; ++i) mean += telemetry[i].actual_rpm;
    s.rpm_mean_attack = mean / static_cast<double>(n - det);
  }
  return s;
}

inline std::string telemetry_csv(const std::vector<TelemetryRecord>& telemetry) {
  std::string out = "time_s,target_rpm,actual_rpm,min_range_m,obstacle,attack,collision\n";
  char buf[160];
  for (const auto& r : telemetry) {
    std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%.4f,%d,%d,%d\n",
                  detail::format_seconds(r.time).c_str(), r.target_rpm, r.actual_rpm,
                  r.min_range_m, r.obstacle ? 1 : 0, r.attack ? 1 : 0, r.collision ? 1 : 0);
    out += buf;
  }
  return out;
}

struct RunReport {
  std::vector<TelemetryRecord> telemetry;
  std::vector<TransmissionRecord> transmissions;
  std::uint32_t bitrate = 500'000;
  std::vector<double> utilization_series;
  std::vector<DetectorAlert> alerts;
  std::vector<ControlCommand> applied_commands;
  RunSummary summary;

  std::string candump() const { return format_log(transmissions, LogFormat::Candump); }
  std::string bus_csv() const { return format_log(transmissions, LogFormat::Csv); }
  std::string telemetry_csv() const { return hackcar::telemetry_csv(telemetry); }
  std::string alerts_csv() const { return hackcar::alerts_csv(alerts); }
  std::string applied_trace() const { return format_trace(applied_commands); }
};

inline nlohmann::json summary_json(const RunReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  const auto& s = r.summary;
  return {{"stopped", s.stopped},
          {"stop_latency_s", opt(s.stop_latency_s)},
          {"collided", s.collided},
          {"detection_time_s", opt(s.detection_time_s)},
          {"settled_time_s", opt(s.settled_time_s)},
          {"rpm_variance_pre", opt(s.rpm_variance_pre)},
          {"rpm_variance_attack", opt(s.rpm_variance_attack)},
          {"rpm_mean_attack", opt(s.rpm_mean_attack)},
          {"frames", r.transmissions.size()},
          {"alerts", r.alerts.size()},
          {"utilization_series", r.utilization_series}};
}

// ---------------------------------------------------------------------------
// Simulation

/// Optional hooks for a live session: commands in, telemetry out.
struct LiveChannel {
  CommandQueue* commands = nullptr;
  TelemetryBroadcast* telemetry = nullptr;
};

class Simulation {
 public:
  explicit Simulation(ScenarioConfig config, LiveChannel live = {})
      : config_(std::move(config)),
        live_(live),
        bus_(BusConfig{config_.bitrate, {}}),
        plant_(config_.vehicle),
        ssc_(make_ssc_config(config_), config_.catalog),
        mcu_(McuConfig{config_.max_rpm, config_.vehicle.max_steer_rad}, config_.catalog),
        attacker_(AttackerConfig{config_.attack.target_id, config_.attack.malicious_rpm, false},
                  config_.bitrate, config_.catalog),
        detector_(config_.detector, config_.catalog),
        rng_(config_.seed) {
    ssc_.set_route(config_.world.route);
    ssc_.service().mode = config_.mode;
    ssc_.service().aeb_enabled = config_.aeb_enabled;
    mcu_boot();

    state_.pos = config_.start_pos;
    state_.heading = config_.start_heading_rad;

    bus_.attach(nodes::ssc, [this](const Delivery& d) { ssc_.on_frame(d); });
    bus_.attach(nodes::mcu, [this](const Delivery& d) { mcu_.on_frame(d); });
    bus_.attach(nodes::attacker, [this](const Delivery& d) {
      if (auto req = attacker_.observe(d)) {
        bus_.request_transmit(req->node, req->frame, req->ready_time);
      }
    });
    bus_.attach(nodes::detector, [this](const Delivery& d) {
      if (auto alert = detector_.observe(d); alert && live_.telemetry) {
        live_.telemetry->post(to_json(*alert));
      }
    });
    bus_.attach(nodes::gateway);
    cycles_total_ = (config_.duration() + kControlPeriod - 1) / kControlPeriod;
  }

  const ScenarioConfig& config() const { return config_; }
  const VirtualBus& bus() const { return bus_; }
  const PlantState& plant_state() const { return state_; }
  const MainController& mcu() const { return mcu_; }
  const SensingController& ssc() const { return ssc_; }
  const Attacker& attacker() const { return attacker_; }
  const Detector& detector() const { return detector_; }
  const std::vector<TelemetryRecord>& telemetry() const { return telemetry_; }
  SimTime now() const { return static_cast<SimTime>(cycle_) * kControlPeriod; }
  bool done() const { return cycle_ >= cycles_total_; }

  /// Actuation sampled at the most recent cycle boundary.
  const Actuation& last_actuation() const { return actuation_; }

  /// Runs one 10 ms control cycle.
  void step_cycle() {
    if (done()) return;
    const SimTime t = now();
    bus_.advance_until(t);

    std::vector<ControlCommand> commands;
    if (config_.teleop == TeleopSource::Trace) {
      while (trace_pos_ < config_.trace.size() && config_.trace[trace_pos_].time <= t) {
        commands.push_back(config_.trace[trace_pos_++]);
      }
    }
    if (live_.commands) {
      auto more = live_.commands->drain(t);
      commands.insert(commands.end(), more.begin(), more.end());
    }
    for (auto cmd : commands) apply_command(cmd, t);
    apply_attack_schedule(t);

    actuation_ = mcu_.actuate();
    ssc_.on_pose(state_.pos, state_.heading);
    for (const auto& f : ssc_.tick(t)) bus_.request_transmit(nodes::ssc, f, t);

    TelemetryRecord rec;
    rec.time = t;
    rec.target_rpm = actuation_.target_rpm;
    rec.actual_rpm = state_.rpm;
    rec.min_range_m = ssc_.forward_range();
    rec.obstacle = ssc_.obstacle_detected();
    rec.attack = attacker_.active();
    rec.collision = collided_;
    telemetry_.push_back(rec);
    publish(rec);

    const SimTime end = std::min(t + kControlPeriod, config_.duration());
    for (SimTime tau = t; tau < end; tau += kPlantStep) {
      const SimTime h = std::min(kPlantStep, end - tau);
      state_ = plant_.step(state_, actuation_, static_cast<double>(h) / 1e6);
      if (!collided_ && collision(state_, config_.world, plant_)) {
        collided_ = true;
        state_.immobilized = true;
      }
      if (state_.time % config_.lidar.period_us == 0) {
        ssc_.on_scan(lidar_scan(state_, config_.world, plant_, config_.lidar, &rng_));
      }
    }
    ++cycle_;
    // Resolve the bus through the end of the cycle so observers see
    // every delivery timestamped inside it.
    bus_.advance_until(end);
  }

  RunReport finish() {
    while (!done()) step_cycle();
    return report();
  }

  /// Report over the cycles run so far.
  RunReport report() const {
    RunReport r;
    r.telemetry = telemetry_;
    r.transmissions = bus_.transmissions();
    r.bitrate = config_.bitrate;
    r.utilization_series = bus_.utilization_series(std::min(now(), config_.duration()));
    r.alerts = detector_.alerts();
    r.applied_commands = applied_;
    if (!telemetry_.empty()) r.summary = attack_effect_metrics(telemetry_, config_.cruise_rpm);
    return r;
  }

 private:
  static SscConfig make_ssc_config(const ScenarioConfig& c) {
    SscConfig s;
    s.cruise_rpm = c.cruise_rpm;
    s.aeb_threshold_m = c.aeb_threshold_m;
    s.aeb_cone_deg = c.aeb_cone_deg;
    s.max_rpm = c.max_rpm;
    s.max_steer_rad = c.vehicle.max_steer_rad;
    s.tracker = PurePursuit{c.lookahead_m, c.vehicle.wheelbase_m, c.vehicle.max_steer_rad};
    return s;
  }

  // Boot configuration: the MCU starts in the scenario's mode without a
  // service frame on the wire.
  void mcu_boot() {
    auto boot = [&](SignalValue v) {
      CanFrame f = service_frame(v, 0, config_.catalog);
      mcu_.handle(f);
    };
    boot(SignalValue::mode(config_.mode));
    boot(SignalValue::aeb(config_.aeb_enabled));
  }

  void apply_command(ControlCommand cmd, SimTime t) {
    applied_.push_back(ControlCommand{cmd.kind, cmd.value, t});
    switch (cmd.kind) {
      case CommandKind::Throttle: throttle_pct_ = cmd.value; break;
      case CommandKind::Steering: steering_pct_ = cmd.value; break;
      default:
        bus_.request_transmit(nodes::gateway,
                              service_frame(*cmd.service_signal(), t, config_.catalog), t);
        return;
    }
    ssc_.set_teleop(throttle_pct_, steering_pct_);
    mcu_.set_teleop(throttle_pct_, steering_pct_);
  }

  void apply_attack_schedule(SimTime t) {
    if (!config_.attack.enabled) return;
    if (!attack_start_sent_ && t >= from_seconds(config_.attack.start_s)) {
      attack_start_sent_ = true;
      bus_.request_transmit(nodes::gateway,
                            service_frame(SignalValue::attack(true), t, config_.catalog), t);
    }
    if (!attack_stop_sent_ && t >= from_seconds(config_.attack.stop_s)) {
      attack_stop_sent_ = true;
      bus_.request_transmit(nodes::gateway,
                            service_frame(SignalValue::attack(false), t, config_.catalog), t);
    }
  }

  void publish(const TelemetryRecord& rec) {
    if (!live_.telemetry) return;
    TelemetryFrame f;
    f.time_s = rec.time_s();
    f.target_rpm = rec.target_rpm;
    f.actual_rpm = rec.actual_rpm;
    f.min_range_m = rec.min_range_m;
    f.obstacle = rec.obstacle;
    f.attack = rec.attack;
    f.collision = rec.collision;
    const SimTime lo = std::max<SimTime>(0, rec.time - kMicrosPerSecond);
    f.utilization_1s = rec.time > lo ? bus_.utilization(lo, rec.time) : 0.0;
    f.mode = mcu_.state().mode;
    f.aeb_enabled = ssc_.service().aeb_enabled;

    auto& out = *live_.telemetry;
    if (rec.obstacle && !last_.obstacle) out.post(event_json("obstacle_detected", rec.time));
    if (rec.collision && !last_.collision) out.post(event_json("collision", rec.time));
    if (rec.attack && !last_.attack) out.post(event_json("attack_started", rec.time));
    if (!rec.attack && last_.attack) out.post(event_json("attack_stopped", rec.time));
    last_ = rec;
    out.publish(f);
    if (cycle_ % 10 == 0) out.post(to_json(f));
  }

  ScenarioConfig config_;
  LiveChannel live_;
  VirtualBus bus_;
  VehiclePlant plant_;
  SensingController ssc_;
  MainController mcu_;
  Attacker attacker_;
  Detector detector_;
  std::mt19937_64 rng_;

  PlantState state_;
  Actuation actuation_;
  bool collided_ = false;
  std::uint64_t cycle_ = 0;
  std::uint64_t cycles_total_ = 0;
  std::size_t trace_pos_ = 0;
  double throttle_pct_ = 0.0;
  double steering_pct_ = 0.0;
  bool attack_start_sent_ = false;
  bool attack_stop_sent_ = false;
  std::vector<TelemetryRecord> telemetry_;
  std::vector<ControlCommand> applied_;
  TelemetryRecord last_;
};

inline RunReport run(const ScenarioConfig& config) { return Simulation(config).finish(); }

}  // namespace hackcar
