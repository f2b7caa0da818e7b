#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hackcar {

enum class Errc {
  CatalogMismatch,
  UnknownId,
  MalformedFrame,
  NotAttached,
  ClockError,
  InvalidWindow,
  UnsupportedFormat,
  InvalidStep,
  ConfigError,
  TraceError,
  NotRunning,
  CommandRejected,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::CatalogMismatch: return "CatalogMismatch";
    case Errc::UnknownId: return "UnknownId";
    case Errc::MalformedFrame: return "MalformedFrame";
    case Errc::NotAttached: return "NotAttached";
    case Errc::ClockError: return "ClockError";
    case Errc::InvalidWindow: return "InvalidWindow";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::InvalidStep: return "InvalidStep";
    case Errc::ConfigError: return "ConfigError";
    case Errc::TraceError: return "TraceError";
    case Errc::NotRunning: return "NotRunning";
    case Errc::CommandRejected: return "CommandRejected";
  }
  return "Unknown";
}

/// Base exception for every failure the simulator reports.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Scenario/config schema violation. `key()` is the dotted path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(Errc::ConfigError, key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Simulation time is integer microseconds everywhere.
using SimTime = std::int64_t;

inline constexpr SimTime kMicrosPerSecond = 1'000'000;
inline constexpr SimTime kMicrosPerMilli = 1'000;

constexpr SimTime from_seconds(double s) {
  return static_cast<SimTime>(s * 1e6 + (s >= 0 ? 0.5 : -0.5));
}
constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }

}  // namespace hackcar
