#include <gtest/gtest.h>

#include "hackcar/ecu_nodes.hpp"

using namespace hackcar;

namespace {

const Catalog& cat() {
  static const Catalog c = Catalog::hackcar();
  return c;
}

CanFrame frame(std::uint16_t id, std::initializer_list<std::uint8_t> bytes) {
  std::vector<std::uint8_t> v(bytes);
  return CanFrame::make(id, v);
}

CanFrame rpm(std::int64_t v) { return encode_frame(cat().at(ids::rpm), SignalValue::rpm(v), 0); }

SignalValue decoded(const CanFrame& f) { return decode_frame(f, cat()); }

LidarScan scan_with_forward_range(double r) {
  LidarScan s;
  s.ranges.assign(1081, 10.0);
  s.ranges[540] = r;
  return s;
}

}  // namespace

TEST(Service, AttackStart) {
  ServiceState s;
  EXPECT_TRUE(handle_service(frame(0x502, {0x01}), s));
  EXPECT_TRUE(s.attack_active);
}

TEST(Service, AebOff) {
  ServiceState s;
  EXPECT_TRUE(handle_service(frame(0x501, {0x00}), s));
  EXPECT_FALSE(s.aeb_enabled);
}

TEST(Service, InvalidEnumIgnoredWithWarning) {
  ServiceState s;
  const auto before = s;
  EXPECT_FALSE(handle_service(frame(0x500, {0x07}), s));
  EXPECT_EQ(s.warnings, 1u);
  s.warnings = 0;
  EXPECT_EQ(s, before);
}

TEST(Service, NonServiceFramesIgnored) {
  ServiceState s;
  EXPECT_FALSE(handle_service(rpm(6000), s));
  EXPECT_EQ(s.warnings, 0u);
}

TEST(Ssc, ClearRoadCruise) {
  SensingController ssc;
  ssc.set_route({{0, 0}, {10, 0}});
  ssc.on_scan(scan_with_forward_range(10.0));
  const auto out = ssc.tick(0);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(decoded(out[0]), SignalValue::rpm(6000));
  EXPECT_EQ(decoded(out[1]), SignalValue::steering_mrad(0));
  EXPECT_EQ(decoded(out[2]), SignalValue::brake(0));
}

TEST(Ssc, NoScanYetUsesCruiseDefaults) {
  SensingController ssc;
  ssc.set_route({{0, 0}, {10, 0}});
  EXPECT_EQ(ssc.forward_range(), 10.0);
  EXPECT_EQ(decoded(ssc.tick(0)[0]), SignalValue::rpm(6000));
}

TEST(Ssc, ObstacleTriggersAeb) {
  SensingController ssc;
  ssc.set_route({{0, 0}, {10, 0}});
  ssc.on_scan(scan_with_forward_range(0.4));
  const auto out = ssc.tick(0);
  EXPECT_EQ(decoded(out[0]), SignalValue::rpm(0));
  EXPECT_EQ(decoded(out[2]), SignalValue::brake(255));
}

TEST(Ssc, AebDisabledByServiceFrame) {
  SensingController ssc;
  ssc.set_route({{0, 0}, {10, 0}});
  const auto off = frame(0x501, {0x00});
  ssc.on_frame(Delivery{off, nodes::gateway, 0});
  ssc.on_scan(scan_with_forward_range(0.4));
  const auto out = ssc.tick(0);
  EXPECT_EQ(decoded(out[0]), SignalValue::rpm(6000));
  EXPECT_EQ(decoded(out[2]), SignalValue::brake(0));
}

TEST(Ssc, ThresholdIsStrict) {
  SensingController ssc;
  ssc.on_scan(scan_with_forward_range(0.5));
  EXPECT_FALSE(ssc.obstacle_detected());
  ssc.on_scan(scan_with_forward_range(0.4999));
  EXPECT_TRUE(ssc.obstacle_detected());
}

TEST(Ssc, ManualModeUsesTeleop) {
  SensingController ssc;
  ssc.service().mode = DriveMode::ManualAEB;
  ssc.set_teleop(50.0, -50.0);
  const auto out = ssc.tick(0);
  EXPECT_EQ(decoded(out[0]), SignalValue::rpm(4000));
  EXPECT_EQ(decoded(out[1]), SignalValue::steering_mrad(-200));
}

TEST(Mcu, LastWriterWins) {
  MainController mcu;
  mcu.handle(rpm(0));
  mcu.handle(rpm(6000));
  EXPECT_EQ(mcu.state().last_rpm_cmd, 6000);
  EXPECT_EQ(mcu.actuate().target_rpm, 6000.0);
}

TEST(Mcu, ModeManual) {
  MainController mcu;
  mcu.handle(frame(0x500, {0x00}));
  EXPECT_EQ(mcu.state().mode, DriveMode::ManualAEB);
}

TEST(Mcu, SteeringPassThrough) {
  MainController mcu;
  mcu.handle(encode_frame(cat().at(ids::steering), SignalValue::steering_mrad(200), 0));
  EXPECT_EQ(mcu.state().last_steering_cmd, 200);
  EXPECT_DOUBLE_EQ(mcu.actuate().steering_rad, 0.2);
}

TEST(Mcu, ManualThrottleMap) {
  MainController mcu(McuConfig{8000.0, 0.4});
  mcu.handle(frame(0x500, {0x00}));
  mcu.set_teleop(50.0, 0.0);
  EXPECT_DOUBLE_EQ(mcu.actuate().target_rpm, 4000.0);
}

TEST(Mcu, ManualBrakeOverridesThrottle) {
  MainController mcu;
  mcu.handle(frame(0x500, {0x00}));
  mcu.set_teleop(100.0, 0.0);
  mcu.handle(encode_frame(cat().at(ids::brake), SignalValue::brake(255), 0));
  const auto a = mcu.actuate();
  EXPECT_EQ(a.target_rpm, 0.0);
  EXPECT_EQ(a.brake_effort, 255);
}

TEST(Mcu, MalformedFrameCounted) {
  MainController mcu;
  mcu.handle(frame(0x400, {0x01, 0x02}));
  EXPECT_EQ(mcu.state().malformed, 1u);
  EXPECT_EQ(mcu.state().last_rpm_cmd, 0);
}

TEST(Attacker, InjectsAfterLegitimateFrame) {
  Attacker atk(AttackerConfig{ids::rpm, 6000, true});
  auto f = rpm(0);
  const auto req = atk.observe(Delivery{f, nodes::ssc, 1000});
  ASSERT_TRUE(req.has_value());
  EXPECT_EQ(req->node, nodes::attacker);
  EXPECT_EQ(req->ready_time, 1002);
  EXPECT_EQ(decoded(req->frame), SignalValue::rpm(6000));
}

TEST(Attacker, InactiveIsSilent) {
  Attacker atk;
  auto f = rpm(0);
  EXPECT_FALSE(atk.observe(Delivery{f, nodes::ssc, 0}).has_value());
}

TEST(Attacker, IgnoresOwnFrames) {
  Attacker atk(AttackerConfig{ids::rpm, 6000, true});
  auto f = rpm(6000);
  EXPECT_FALSE(atk.observe(Delivery{f, nodes::attacker, 0}).has_value());
  EXPECT_EQ(atk.injections(), 0u);
}

TEST(Attacker, ServiceFrameToggles) {
  Attacker atk;
  const auto start = frame(0x502, {0x01});
  atk.observe(Delivery{start, nodes::gateway, 0});
  EXPECT_TRUE(atk.active());
  const auto stop = frame(0x502, {0x00});
  atk.observe(Delivery{stop, nodes::gateway, 0});
  EXPECT_FALSE(atk.active());
}

TEST(Detector, SteadyStreamIsQuiet) {
  Detector det;
  for (SimTime t = 0; t < kMicrosPerSecond; t += 10'000) {
    auto f = rpm(6000);
    det.observe(Delivery{f, nodes::ssc, t + 200});
  }
  EXPECT_TRUE(det.alerts().empty());
}

TEST(Detector, OverwritePairAlerts) {
  Detector det;
  auto f = rpm(0);
  det.observe(Delivery{f, nodes::ssc, 200});
  det.observe(Delivery{f, nodes::ssc, 10'200});
  const auto alert = det.observe(Delivery{f, nodes::attacker, 10'362});
  ASSERT_TRUE(alert.has_value());
  EXPECT_EQ(alert->reason, "inter-arrival-anomaly");
  EXPECT_EQ(alert->id, ids::rpm);
  EXPECT_NEAR(alert->observed_gap_ms, 0.162, 1e-9);
  EXPECT_EQ(alert->expected_gap_ms, 10.0);
}

TEST(Detector, EventDrivenIdsNeverAlert) {
  Detector det;
  const auto f = frame(0x502, {0x01});
  for (SimTime t : {0, 1, 2, 5'000'000}) det.observe(Delivery{f, nodes::gateway, t});
  EXPECT_TRUE(det.alerts().empty());
}

TEST(Detector, MissingFrameAlerts) {
  Detector det;
  auto f = rpm(6000);
  det.observe(Delivery{f, nodes::ssc, 0});
  EXPECT_TRUE(det.observe(Delivery{f, nodes::ssc, 20'000}).has_value());
}

TEST(Detector, AlertsCsv) {
  const std::vector<DetectorAlert> alerts{{1'000'362, ids::rpm, "inter-arrival-anomaly", 0.162, 10.0}};
  EXPECT_EQ(alerts_csv(alerts),
            "time_s,id_hex,reason,observed_ms,expected_ms\n"
            "1.000362,400,inter-arrival-anomaly,0.162,10.000\n");
}
