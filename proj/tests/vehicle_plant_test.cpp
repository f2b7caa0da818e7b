#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "hackcar/pure_pursuit.hpp"
#include "hackcar/vehicle_plant.hpp"

using namespace hackcar;

namespace {

struct Trace {
  std::vector<double> rpm;  // one sample per 10 ms, after the step
  PlantState final;
};

Trace drive(const VehiclePlant& plant, PlantState s, const Actuation& act, double seconds) {
  Trace t;
  const int steps = static_cast<int>(std::lround(seconds / 0.01));
  for (int i = 0; i < steps; ++i) {
    s = plant.step(s, act, 0.01);
    t.rpm.push_back(s.rpm);
  }
  t.final = s;
  return t;
}

// Time after which every sample stays inside +/-tol of target.
double settle_time(const std::vector<double>& rpm, double target, double tol) {
  std::size_t last_out = 0;
  bool any = false;
  for (std::size_t i = 0; i < rpm.size(); ++i) {
    if (std::abs(rpm[i] - target) > tol * target) {
      last_out = i;
      any = true;
    }
  }
  return any ? 0.01 * static_cast<double>(last_out + 1) : 0.0;
}

World wall_ahead(double x, double half_width = 2.0) {
  World w;
  w.obstacles.emplace_back(Box{{x, -half_width}, {x + 0.2, half_width}});
  return w;
}

}  // namespace

TEST(Plant, SettlesWithinThreeSeconds) {
  const VehiclePlant plant;
  for (double target : {2000.0, 4000.0, 6000.0, 8000.0}) {
    const auto t = drive(plant, {}, {target, 0.0, 0}, 6.0);
    EXPECT_LE(settle_time(t.rpm, target, 0.02), 3.0) << target;
    const double peak = *std::max_element(t.rpm.begin(), t.rpm.end());
    EXPECT_GT(peak, target) << "expected an overshoot at " << target;
    EXPECT_LT(peak, 1.3 * target) << target;
  }
}

TEST(Plant, Equilibrium) {
  const VehiclePlant plant;
  const auto s0 = plant.cruising_at(6000);
  const auto t = drive(plant, s0, {6000, 0.0, 0}, 2.0);
  for (double r : t.rpm) ASSERT_NEAR(r, 6000.0, 1e-6);
  EXPECT_NEAR(t.final.pos.x, 2.0 * plant.speed_mps(s0), 1e-6);
}

TEST(Plant, FullBrakeStopsUnderOneSecond) {
  const VehiclePlant plant;
  const auto t = drive(plant, plant.cruising_at(6000), {0.0, 0.0, 255}, 1.0);
  EXPECT_LT(t.rpm.back(), 60.0);
  for (std::size_t i = 1; i < t.rpm.size(); ++i) ASSERT_LE(t.rpm[i], t.rpm[i - 1]);
  EXPECT_GE(t.rpm.back(), 0.0);
}

TEST(Plant, CoastingIsSlowerThanBraking) {
  const VehiclePlant plant;
  const auto coast = drive(plant, plant.cruising_at(6000), {0.0, 0.0, 0}, 0.5);
  const auto brake = drive(plant, plant.cruising_at(6000), {0.0, 0.0, 255}, 0.5);
  EXPECT_GT(coast.rpm.back(), brake.rpm.back());
}

TEST(Plant, StraightLineKinematics) {
  const VehiclePlant plant;
  PlantState s = plant.cruising_at(5000);
  s.heading = std::numbers::pi / 2;
  const auto t = drive(plant, s, {5000, 0.0, 0}, 1.0);
  EXPECT_NEAR(t.final.pos.x, 0.0, 1e-9);
  EXPECT_NEAR(t.final.pos.y, 0.5, 1e-9);
}

TEST(Plant, ConstantSteeringTracesCircle) {
  const VehiclePlant plant;
  const double delta = 0.2;
  const auto t = drive(plant, plant.cruising_at(5000), {5000, delta, 0}, 3.0);
  const double radius = plant.params().wheelbase_m / std::tan(delta);
  const Vec2 centre{0.0, radius};
  EXPECT_NEAR(norm(t.final.pos - centre), radius, 1e-3);
  EXPECT_NEAR(t.final.heading, wrap_angle(0.5 * 3.0 / radius), 1e-3);
}

TEST(Plant, SteeringIsClamped) {
  const VehiclePlant plant;
  const auto s = plant.step({}, {0.0, 2.0, 0}, 0.01);
  EXPECT_DOUBLE_EQ(s.steering_angle, plant.params().max_steer_rad);
}

TEST(Plant, InvalidStep) {
  const VehiclePlant plant;
  for (double dt : {0.0, -0.01, 0.02}) {
    try {
      plant.step({}, {}, dt);
      FAIL() << dt;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidStep);
    }
  }
}

TEST(Plant, StepSplitIsExact) {
  const VehiclePlant plant;
  PlantState a;
  PlantState b;
  for (int i = 0; i < 300; ++i) {
    a = plant.step(a, {6000, 0.1, 0}, 0.01);
    for (int k = 0; k < 10; ++k) b = plant.step(b, {6000, 0.1, 0}, 0.001);
  }
  EXPECT_DOUBLE_EQ(a.rpm, b.rpm);
  EXPECT_DOUBLE_EQ(a.pos.x, b.pos.x);
}

TEST(Plant, ImmobilizedHoldsPose) {
  const VehiclePlant plant;
  PlantState s = plant.cruising_at(6000);
  s.immobilized = true;
  s = plant.step(s, {6000, 0.0, 0}, 0.01);
  EXPECT_EQ(s.pos, Vec2{});
}

TEST(Lidar, EmptyWorldIsMaxRange) {
  const VehiclePlant plant;
  const auto scan = lidar_scan(PlantState{}, World{}, plant);
  ASSERT_EQ(scan.ranges.size(), 1081u);
  for (double r : scan.ranges) ASSERT_EQ(r, 10.0);
  EXPECT_NEAR(scan.angle_of(0), -0.75 * std::numbers::pi, 1e-12);
  EXPECT_NEAR(scan.angle_of(540), 0.0, 1e-12);
  EXPECT_NEAR(scan.angle_of(1080), 0.75 * std::numbers::pi, 1e-12);
}

TEST(Lidar, WallDeadAhead) {
  const VehiclePlant plant;
  const double sensor_x = plant.params().lidar_offset_m;
  const auto scan = lidar_scan(PlantState{}, wall_ahead(sensor_x + 0.5), plant);
  EXPECT_NEAR(scan.ranges[540], 0.5, 1e-12);
  EXPECT_NEAR(min_forward_range(scan, 15.0), 0.5, 1e-12);
}

TEST(Lidar, WallBeamsMatchAnalyticDistance) {
  const VehiclePlant plant;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(0.3, 8.0);
  std::uniform_real_distribution<double> heading(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    PlantState s;
    s.heading = heading(rng);
    const double d = dist(rng);
    const Vec2 o = plant.lidar_origin(s);
    // A long segment perpendicular to the heading, d ahead of the sensor.
    const Vec2 fwd{std::cos(s.heading), std::sin(s.heading)};
    const Vec2 left{-fwd.y, fwd.x};
    World w;
    w.obstacles.emplace_back(Segment{o + d * fwd - 50.0 * left, o + d * fwd + 50.0 * left});
    const auto scan = lidar_scan(s, w, plant);
    for (std::size_t i = 0; i < scan.ranges.size(); ++i) {
      const double a = scan.angle_of(i);
      const double expected = std::cos(a) > 1e-9 ? std::min(10.0, d / std::cos(a)) : 10.0;
      ASSERT_NEAR(scan.ranges[i], expected, 1e-9) << "trial " << trial << " beam " << i;
    }
  }
}

TEST(Lidar, ObstacleBehindIsInvisible) {
  const VehiclePlant plant;
  World w;
  w.obstacles.emplace_back(Box{{-1.5, -0.3}, {-1.0, 0.3}});
  EXPECT_EQ(lidar_scan(PlantState{}, w, plant).ranges, lidar_scan(PlantState{}, World{}, plant).ranges);
}

TEST(Lidar, NoiseIsSeededAndClamped) {
  const VehiclePlant plant;
  LidarConfig cfg;
  cfg.noise_sigma_m = 0.05;
  std::mt19937_64 a(3);
  std::mt19937_64 b(3);
  const auto w = wall_ahead(1.0);
  const auto s1 = lidar_scan(PlantState{}, w, plant, cfg, &a);
  const auto s2 = lidar_scan(PlantState{}, w, plant, cfg, &b);
  EXPECT_EQ(s1.ranges, s2.ranges);
  for (double r : s1.ranges) {
    ASSERT_GE(r, cfg.min_range_m);
    ASSERT_LE(r, cfg.max_range_m);
  }
  EXPECT_NE(s1.ranges[540], 0.7);
}

TEST(ForwardRange, Cone) {
  LidarScan scan;
  scan.ranges.assign(1081, 10.0);
  EXPECT_EQ(min_forward_range(scan, 15.0), 10.0);
  scan.ranges[540] = 0.5;
  EXPECT_EQ(min_forward_range(scan, 15.0), 0.5);
  scan.ranges[540] = 10.0;
  scan.ranges[900] = 0.3;  // +90 degrees
  EXPECT_EQ(min_forward_range(scan, 15.0), 10.0);
  scan.ranges[600] = 0.4;  // +15 degrees, on the cone edge
  EXPECT_EQ(min_forward_range(scan, 15.0), 0.4);
}

TEST(Collision, Examples) {
  const VehiclePlant plant;
  EXPECT_FALSE(collision(PlantState{}, wall_ahead(5.0), plant));
  World w;
  w.obstacles.emplace_back(Box{{-0.5, -0.5}, {0.5, 0.5}});
  EXPECT_TRUE(collision(PlantState{}, w, plant));
  // Front bumper just touching versus just short.
  EXPECT_TRUE(collision(PlantState{}, wall_ahead(plant.params().front_overhang_m - 1e-6), plant));
  EXPECT_FALSE(collision(PlantState{}, wall_ahead(plant.params().front_overhang_m + 1e-6), plant));
  World seg;
  seg.obstacles.emplace_back(Segment{{0.2, -1.0}, {0.2, 1.0}});
  EXPECT_TRUE(collision(PlantState{}, seg, plant));
}

TEST(PurePursuit, StraightRouteNeedsNoSteering) {
  const PurePursuit pp;
  const std::vector<Vec2> route{{0, 0}, {10, 0}};
  EXPECT_NEAR(pp.steer({1, 0}, 0.0, route), 0.0, 1e-12);
  EXPECT_GT(pp.steer({1, -0.2}, 0.0, route), 0.0);
  EXPECT_LT(pp.steer({1, 0.2}, 0.0, route), 0.0);
}

TEST(PurePursuit, LookaheadPoint) {
  const std::vector<Vec2> route{{0, 0}, {1, 0}, {1, 5}};
  const auto p = PurePursuit::lookahead_point({0.8, 0.1}, route, 0.6);
  EXPECT_NEAR(p.x, 1.0, 1e-12);
  EXPECT_NEAR(p.y, 0.4, 1e-12);
  const auto end = PurePursuit::lookahead_point({1, 5}, route, 0.6);
  EXPECT_NEAR(end.y, 5.6, 1e-12);
  // Beyond the last waypoint the target keeps moving ahead of the car.
  const auto past = PurePursuit::lookahead_point({1, 7}, route, 0.6);
  EXPECT_NEAR(past.x, 1.0, 1e-12);
  EXPECT_NEAR(past.y, 7.6, 1e-12);
}

TEST(PurePursuit, FollowsAnLShapedRoute) {
  const VehiclePlant plant;
  const PurePursuit pp;
  const std::vector<Vec2> route{{0, 0}, {3, 0}, {3, 3}};
  PlantState s = plant.cruising_at(5000);
  double worst = 0.0;
  for (int i = 0; i < 1600; ++i) {
    s = plant.step(s, {5000, pp.steer(s.pos, s.heading, route), 0}, 0.01);
    const Vec2 p = s.pos;
    // The minimum turning radius forces a cut near the corner; judge the legs.
    if (norm(p - Vec2{3, 0}) < 2.0) continue;
    const double err = p.x < 3 && p.y < 1 ? std::abs(p.y) : std::abs(p.x - 3);
    worst = std::max(worst, err);
  }
  EXPECT_LT(worst, 0.05);
  EXPECT_NEAR(s.pos.x, 3.0, 0.01);
  EXPECT_GT(s.pos.y, 3.0);
}
