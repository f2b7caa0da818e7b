#pragma once

// Pure-pursuit path tracker over a polyline route.

#include <cmath>
#include <span>

#include "hackcar/vehicle_plant.hpp"

namespace hackcar {

struct PurePursuit {
  double lookahead_m = 0.6;
  double wheelbase_m = 0.33;
  double max_steer_rad = 0.4;

  /// Point on the route `lookahead_m` past the closest point to `pos`.
  /// Past the final waypoint the last segment is extended.
  static Vec2 lookahead_point(Vec2 pos, std::span<const Vec2> route, double lookahead) {
    if (route.empty()) return pos;
    if (route.size() == 1) return route.front();

    std::size_t seg = 0;
    double seg_t = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
      const Vec2 e = route[i + 1] - route[i];
      const double len2 = dot(e, e);
      const bool last = i + 2 == route.size();
      double t = len2 > 0 ? std::max(0.0, dot(pos - route[i], e) / len2) : 0.0;
      if (!last) t = std::min(t, 1.0);
      const double d = norm(route[i] + t * e - pos);
      if (d < best - 1e-12) {
        best = d;
        seg = i;
        seg_t = t;
      }
    }

    double left = lookahead;
    for (std::size_t i = seg; i + 1 < route.size(); ++i) {
      const Vec2 e = route[i + 1] - route[i];
      const double len = norm(e);
      const double start = (i == seg) ? seg_t * len : 0.0;
      const bool last = i + 2 == route.size();
      if ((last || len - start >= left) && len > 0) return route[i] + ((start + left) / len) * e;
      left -= (len - start);
    }
    const Vec2 e = route.back() - route[route.size() - 2];
    const double len = norm(e);
    return len > 0 ? route.back() + (left / len) * e : route.back();
  }

  /// Front-wheel angle (radians, clamped) steering the rear-axle pose toward the route.
  double steer(Vec2 pos, double heading, std::span<const Vec2> route) const {
    const Vec2 target = lookahead_point(pos, route, lookahead_m);
    const Vec2 d = target - pos;
    const double dist = norm(d);
    if (dist < 1e-9) return 0.0;
    const double alpha = wrap_angle(std::atan2(d.y, d.x) - heading);
    const double delta = std::atan2(2.0 * wheelbase_m * std::sin(alpha), dist);
    return std::clamp(delta, -max_steer_rad, max_steer_rad);
  }
};

}  // namespace hackcar
