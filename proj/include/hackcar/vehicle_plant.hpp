#pragma once

// Vehicle plant: engine speed loop, kinematic bicycle, obstacle world and the
// simulated 2D LiDAR.
//
// Engine model. A first-order motor, tau * d(rpm)/dt = u - rpm, driven by a
// discrete PI speed controller with target feedforward that updates every
// control period:
//
//   u = target + kp * e + ki * integral(e),   clamped to [0, drive_max]
//
// Brake effort adds a constant deceleration torque (brake_decel * effort/255)
// that the speed loop can fight. A zero or negative target idles the drive
// and clears the integrator.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "hackcar/error.hpp"

namespace hackcar {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

/// Axis-aligned box, meters.
struct Box {
  Vec2 min;
  Vec2 max;
  friend bool operator==(const Box&, const Box&) = default;
};

/// Thin wall between two points, meters.
struct Segment {
  Vec2 a;
  Vec2 b;
  friend bool operator==(const Segment&, const Segment&) = default;
};

using Obstacle = std::variant<Box, Segment>;

struct World {
  std::vector<Obstacle> obstacles;
  std::vector<Vec2> route;
  friend bool operator==(const World&, const World&) = default;
};

struct VehicleParams {
  double k_v = 1.0e-4;           // ground speed m/s per rpm
  double wheelbase_m = 0.33;
  double max_steer_rad = 0.4;
  double motor_tau_s = 0.3;
  double kp = 1.0;
  double ki = 4.0;               // 1/s
  double drive_max_rpm = 20000.0;
  double brake_decel_rpm_s = 10000.0;  // at effort 255
  SimTime control_period_us = 10'000;
  SimTime integration_step_us = 1'000;
  double lidar_offset_m = 0.3;   // sensor ahead of the reference (rear axle) point
  double front_overhang_m = 0.35;
  double rear_overhang_m = 0.1;
  double width_m = 0.3;

  friend bool operator==(const VehicleParams&, const VehicleParams&) = default;
};

struct PlantState {
  double rpm = 0.0;
  double target_rpm_applied = 0.0;
  Vec2 pos;
  double heading = 0.0;
  double steering_angle = 0.0;
  int brake_effort = 0;
  SimTime time = 0;

  // speed controller internals
  double integral = 0.0;
  double drive = 0.0;
  SimTime next_control = 0;

  /// Set once the vehicle hits something; pose stays where it is.
  bool immobilized = false;

  friend bool operator==(const PlantState&, const PlantState&) = default;
};

struct Actuation {
  double target_rpm = 0.0;
  double steering_rad = 0.0;
  int brake_effort = 0;
};

class VehiclePlant {
 public:
  explicit VehiclePlant(VehicleParams params = {}) : params_(params) {}

  const VehicleParams& params() const { return params_; }

  double speed_mps(const PlantState& s) const { return params_.k_v * s.rpm; }

  /// Steady cruise at `rpm`: the next control update sees zero error.
  PlantState cruising_at(double rpm, PlantState s = {}) const {
    s.rpm = rpm;
    s.target_rpm_applied = rpm;
    s.drive = rpm;
    s.integral = 0.0;
    return s;
  }

  PlantState step(PlantState s, const Actuation& act, double dt_s) const {
    if (!(dt_s > 0.0) || dt_s > 0.01 + 1e-12) {
      throw Error(Errc::InvalidStep, "dt must be in (0, 0.01] s, got " + std::to_string(dt_s));
    }
    SimTime remaining = std::llround(dt_s * 1e6);
    if (remaining < 1) throw Error(Errc::InvalidStep, "dt below one microsecond");

    while (remaining > 0) {
      if (s.time >= s.next_control) {
        control_update(s, act);
        while (s.next_control <= s.time) s.next_control += params_.control_period_us;
      }
      const SimTime h =
          std::min({remaining, params_.integration_step_us, s.next_control - s.time});
      integrate(s, h);
      remaining -= h;
    }
    return s;
  }

  Vec2 lidar_origin(const PlantState& s) const {
    return s.pos + params_.lidar_offset_m * Vec2{std::cos(s.heading), std::sin(s.heading)};
  }

  /// Footprint corners, counter-clockwise from rear-right.
  std::array<Vec2, 4> footprint(const PlantState& s) const {
    const Vec2 fwd{std::cos(s.heading), std::sin(s.heading)};
    const Vec2 left{-fwd.y, fwd.x};
    const double hw = params_.width_m / 2.0;
    const Vec2 rear = s.pos - params_.rear_overhang_m * fwd;
    const Vec2 front = s.pos + params_.front_overhang_m * fwd;
    return {rear - hw * left, front - hw * left, front + hw * left, rear + hw * left};
  }

 private:
  void control_update(PlantState& s, const Actuation& act) const {
    s.target_rpm_applied = act.target_rpm;
    s.brake_effort = std::clamp(act.brake_effort, 0, 255);
    s.steering_angle = std::clamp(act.steering_rad, -params_.max_steer_rad, params_.max_steer_rad);

    const double target = act.target_rpm;
    if (target <= 0.0) {
      s.integral = 0.0;
      s.drive = 0.0;
      return;
    }
    const double dt = static_cast<double>(params_.control_period_us) / 1e6;
    const double e = target - s.rpm;
    const double raw = target + params_.kp * e + params_.ki * (s.integral + e * dt);
    // Conditional integration: hold the integrator while saturated in the
    // direction the error is pushing.
    const bool high = raw > params_.drive_max_rpm && e > 0;
    const bool low = raw < 0.0 && e < 0;
    if (!high && !low) s.integral += e * dt;
    s.drive = std::clamp(target + params_.kp * e + params_.ki * s.integral, 0.0,
                         params_.drive_max_rpm);
  }

  void integrate(PlantState& s, SimTime h_us) const {
    const double h = static_cast<double>(h_us) / 1e6;
    double accel = (s.drive - s.rpm) / params_.motor_tau_s;
    if (s.rpm > 0.0) accel -= params_.brake_decel_rpm_s * s.brake_effort / 255.0;
    const double rpm_next = std::max(0.0, s.rpm + accel * h);

    if (!s.immobilized) {
      const double v = params_.k_v * s.rpm;
      s.pos.x += v * std::cos(s.heading) * h;
      s.pos.y += v * std::sin(s.heading) * h;
      s.heading =
          wrap_angle(s.heading + v / params_.wheelbase_m * std::tan(s.steering_angle) * h);
    }
    s.rpm = rpm_next;
    s.time += h_us;
  }

  VehicleParams params_;
};

// ---------------------------------------------------------------------------
// LiDAR

struct LidarConfig {
  double angle_min_deg = -135.0;
  double angle_increment_deg = 0.25;
  std::size_t steps = 1081;
  double max_range_m = 10.0;
  double min_range_m = 0.001;
  SimTime period_us = 25'000;
  double noise_sigma_m = 0.0;

  friend bool operator==(const LidarConfig&, const LidarConfig&) = default;
};

struct LidarScan {
  std::vector<double> ranges;
  double angle_min = deg_to_rad(-135.0);        // radians, relative to heading
  double angle_increment = deg_to_rad(0.25);    // radians
  SimTime stamp = 0;

  double angle_of(std::size_t i) const { return angle_min + angle_increment * static_cast<double>(i); }
};

namespace detail {

inline std::optional<double> ray_hit(Vec2 o, Vec2 d, const Box& b) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const std::array<double, 2> origin{o.x, o.y};
  const std::array<double, 2> dir{d.x, d.y};
  const std::array<double, 2> lo{b.min.x, b.min.y};
  const std::array<double, 2> hi{b.max.x, b.max.y};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return std::nullopt;
      continue;
    }
    double a = (lo[k] - origin[k]) / dir[k];
    double c = (hi[k] - origin[k]) / dir[k];
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
  }
  if (t1 < t0 || t1 < 0.0) return std::nullopt;
  return std::max(t0, 0.0);
}

inline std::optional<double> ray_hit(Vec2 o, Vec2 d, const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double denom = cross(d, e);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const Vec2 w = s.a - o;
  const double t = cross(w, e) / denom;
  const double u = cross(w, d) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

}  // namespace detail

/// Distance along a ray from `origin` in direction `angle` to the nearest obstacle.
inline std::optional<double> cast_ray(Vec2 origin, double angle, const World& world) {
  const Vec2 d{std::cos(angle), std::sin(angle)};
  std::optional<double> best;
  for (const auto& obs : world.obstacles) {
    auto hit = std::visit([&](const auto& o) { return detail::ray_hit(origin, d, o); }, obs);
    if (hit && (!best || *hit < *best)) best = hit;
  }
  return best;
}

template <class Rng = std::mt19937_64>
LidarScan lidar_scan(const PlantState& state, const World& world, const VehiclePlant& plant,
                     const LidarConfig& cfg = {}, Rng* rng = nullptr) {
  LidarScan scan;
  scan.angle_min = deg_to_rad(cfg.angle_min_deg);
  scan.angle_increment = deg_to_rad(cfg.angle_increment_deg);
  scan.stamp = state.time;
  scan.ranges.resize(cfg.steps, cfg.max_range_m);
  const Vec2 origin = plant.lidar_origin(state);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma_m);
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    double r = cfg.max_range_m;
    if (auto hit = cast_ray(origin, state.heading + scan.angle_of(i), world)) {
      r = std::min(r, *hit);
    }
    if (rng != nullptr && cfg.noise_sigma_m > 0.0 && r < cfg.max_range_m) r += noise(*rng);
    scan.ranges[i] = std::clamp(r, cfg.min_range_m, cfg.max_range_m);
  }
  return scan;
}

/// Smallest range among beams within +/- half_width_deg of straight ahead.
inline double min_forward_range(const LidarScan& scan, double half_width_deg) {
  const double limit = deg_to_rad(half_width_deg) + 1e-9;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scan.ranges.size(); ++i) {
    if (std::abs(scan.angle_of(i)) <= limit) best = std::min(best, scan.ranges[i]);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Collision

namespace detail {

inline bool separated_on(Vec2 axis, std::span<const Vec2> a, std::span<const Vec2> b) {
  auto range = [&](std::span<const Vec2> pts) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto p : pts) {
      const double v = dot(p, axis);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return std::pair{lo, hi};
  };
  const auto [alo, ahi] = range(a);
  const auto [blo, bhi] = range(b);
  return ahi < blo || bhi < alo;
}

inline bool polygons_overlap(std::span<const Vec2> a, std::span<const Vec2> b) {
  for (auto poly : {a, b}) {
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2 edge = poly[(i + 1) % poly.size()] - poly[i];
      if (norm(edge) < 1e-15) continue;
      if (separated_on(Vec2{-edge.y, edge.x}, a, b)) return false;
    }
  }
  return true;
}

}  // namespace detail

inline bool collision(const PlantState& state, const World& world, const VehiclePlant& plant) {
  const auto fp = plant.footprint(state);
  for (const auto& obs : world.obstacles) {
    bool hit = false;
    if (const auto* b = std::get_if<Box>(&obs)) {
      const std::array<Vec2, 4> box{b->min, Vec2{b->max.x, b->min.y}, b->max,
                                    Vec2{b->min.x, b->max.y}};
      hit = detail::polygons_overlap(fp, box);
    } else {
      const auto& s = std::get<Segment>(obs);
      const std::array<Vec2, 2> seg{s.a, s.b};
      hit = detail::polygons_overlap(fp, seg);
    }
    if (hit) return true;
  }
  return false;
}

}  // namespace hackcar
