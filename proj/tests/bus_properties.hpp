#pragma once

// Randomized request streams for the virtual bus and the invariant checker
// shared by the unit tests and the acceptance binary.

#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "hackcar/virtual_bus.hpp"

namespace bus_props {

using namespace hackcar;

struct StreamResult {
  std::vector<BusEvent> events;
  std::vector<TransmissionRecord> records;
  std::map<NodeId, std::size_t> deliveries;
  std::size_t requested = 0;
};

/// Drives a bus with `frames` random requests from five nodes, in bursts
/// that force contention, and returns everything it produced.
inline StreamResult random_stream(std::uint64_t seed, std::size_t frames,
                                  std::uint32_t bitrate = 500'000) {
  std::mt19937_64 rng(seed);
  VirtualBus bus(BusConfig{bitrate, {}});
  StreamResult out;
  for (std::uint16_t n = 0; n < 5; ++n) {
    bus.attach(NodeId{n}, [&out, n](const Delivery&) { ++out.deliveries[NodeId{n}]; });
  }
  std::uniform_int_distribution<int> node(0, 4);
  std::uniform_int_distribution<int> id_pick(0, 9);
  std::uniform_int_distribution<int> any_id(0, kMaxStandardId);
  std::uniform_int_distribution<int> dlc(0, 8);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> burst(1, 6);
  std::uniform_int_distribution<int> gap(0, 600);
  std::uniform_int_distribution<int> skew(0, 300);
  static constexpr std::uint16_t kHot[] = {0x400, 0x401, 0x402, 0x500, 0x501};

  SimTime t = 0;
  while (out.requested < frames) {
    t += gap(rng);
    auto ev = bus.advance_until(t);
    out.events.insert(out.events.end(), ev.begin(), ev.end());
    const int k = burst(rng);
    for (int i = 0; i < k && out.requested < frames; ++i) {
      const int pick = id_pick(rng);
      const auto id = static_cast<std::uint16_t>(pick < 5 ? kHot[pick] : any_id(rng));
      std::array<std::uint8_t, 8> data{};
      const int n = dlc(rng);
      for (int b = 0; b < n; ++b) data[b] = static_cast<std::uint8_t>(byte(rng));
      bus.request_transmit(NodeId{static_cast<std::uint16_t>(node(rng))},
                           CanFrame::make(id, std::span(data.data(), n)), t + skew(rng));
      ++out.requested;
    }
  }
  auto ev = bus.advance_until(t + 10 * kMicrosPerSecond);
  out.events.insert(out.events.end(), ev.begin(), ev.end());
  out.records = bus.transmissions();
  return out;
}

/// Empty string when every invariant holds, otherwise the first violation.
inline std::string check_invariants(const StreamResult& r, std::uint32_t bitrate = 500'000) {
  const auto& rec = r.records;
  if (rec.size() != r.requested) {
    return "conservation: " + std::to_string(r.requested) + " requested, " +
           std::to_string(rec.size()) + " transmitted";
  }
  for (const auto& [node, count] : r.deliveries) {
    if (count != rec.size()) return "broadcast: node " + node_name(node) + " missed deliveries";
  }
  for (std::size_t k = 0; k < rec.size(); ++k) {
    const auto& a = rec[k];
    if (a.end() - a.start != frame_duration_us(frame_bit_length(a.frame), bitrate)) {
      return "duration mismatch at record " + std::to_string(k);
    }
    if (a.start < a.frame.enqueue_time) return "started before ready at " + std::to_string(k);
    if (k > 0 && a.start < rec[k - 1].end()) return "preemption at record " + std::to_string(k);

    // Bus never idles while something is ready.
    SimTime earliest = a.frame.enqueue_time;
    for (std::size_t j = k + 1; j < rec.size(); ++j) {
      earliest = std::min(earliest, rec[j].frame.enqueue_time);
    }
    const SimTime free = k > 0 ? rec[k - 1].end() : 0;
    if (a.start != std::max(free, earliest)) return "idle gap before record " + std::to_string(k);

    // Nothing still waiting at the start instant outranks the winner.
    for (std::size_t j = k + 1; j < rec.size(); ++j) {
      const auto& b = rec[j];
      if (b.frame.enqueue_time > a.start) continue;
      const auto ka = std::tie(a.frame.id, a.sender.value);
      const auto kb = std::tie(b.frame.id, b.sender.value);
      if (kb < ka || (kb == ka && b.frame.enqueue_time < a.frame.enqueue_time)) {
        return "priority inversion: record " + std::to_string(j) + " beat by " +
               std::to_string(k);
      }
    }
  }
  return {};
}

}  // namespace bus_props
