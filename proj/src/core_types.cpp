#include "rcms/core_types.hpp"

#include <fmt/format.h>

namespace rcms {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ParseError: return "ParseError";
    case Errc::OffMapError: return "OffMapError";
    case Errc::NoTraffic: return "NoTraffic";
    case Errc::UnknownVehicle: return "UnknownVehicle";
    case Errc::NoRoute: return "NoRoute";
    case Errc::TtlExpired: return "TtlExpired";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::EmptyRegion: return "EmptyRegion";
    case Errc::TooFewCores: return "TooFewCores";
    case Errc::NoVehicles: return "NoVehicles";
    case Errc::MalformedLog: return "MalformedLog";
    case Errc::ConfigError: return "ConfigError";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::NonMonotonicTime: return "NonMonotonicTime";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string_view to_string(VehicleRole role) {
  switch (role) {
    case VehicleRole::Ordinary: return "ordinary";
    case VehicleRole::Core: return "core";
    case VehicleRole::Gateway: return "gateway";
    case VehicleRole::Unattached: return "unattached";
  }
  return "unknown";
}

Vec2 VehicleState::heading() const {
  const double n = speed.norm();
  if (n <= 0.0) return direction;
  return speed * (1.0 / n);
}

double relative_speed(const VehicleState& a, const VehicleState& b) {
  return (a.speed - b.speed).norm();
}

double relative_distance(const VehicleState& a, const VehicleState& b) {
  return (a.position - b.position).norm();
}

int heading_sign_relative_to(const VehicleState& self, const VehicleState& reference) {
  return self.heading().dot(reference.heading()) > 0.0 ? +1 : -1;
}

Trajectory::Trajectory(VehicleId vehicle_id, std::size_t max_length)
    : vehicle_id_(vehicle_id), max_length_(max_length) {
  if (max_length_ == 0) throw Error(Errc::ConfigError, "trajectory max_length must be positive");
}

void Trajectory::append(const VehicleState& state) {
  if (!samples_.empty() && !(state.timestamp > samples_.back().timestamp)) {
    throw Error(Errc::NonMonotonicTime,
                fmt::format("vehicle {}: timestamp {} not after {}", vehicle_id_, state.timestamp,
                            samples_.back().timestamp));
  }
  if (samples_.size() == max_length_) samples_.pop_front();
  samples_.push_back(state);
}

void ProtocolConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw Error(Errc::ConfigError, fmt::format("{}: {}", field, rule));
  };
  auto fraction = [](double f) { return f > 0.0 && f <= 1.0; };
  require(zeta > 0.0, "zeta", "must be > 0");
  require(updating_interval > 0.0, "updating_interval", "must be > 0");
  require(comm_range > 0.0, "comm_range", "must be > 0");
  require(tti_congestion_threshold > 0.0, "tti_congestion_threshold", "must be > 0");
  require(fraction(overlap_agg_fraction), "overlap_agg_fraction", "must be in (0,1]");
  require(fraction(replacement_loss_fraction), "replacement_loss_fraction", "must be in (0,1]");
  require(fraction(speed_change_fraction), "speed_change_fraction", "must be in (0,1]");
  require(decomposition_threshold > 0.0 && decomposition_threshold < 1.0, "decomposition_threshold",
          "must be in (0,1)");
  require(max_read_retries >= 0, "max_read_retries", "must be >= 0");
  require(approach_radius >= 0.0, "approach_radius", "must be >= 0");
  require(turn_match_cosine >= -1.0 && turn_match_cosine <= 1.0, "turn_match_cosine", "must be in [-1,1]");
  require(replacement_min_roster >= 1, "replacement_min_roster", "must be >= 1");
  require(distance_scale > 0.0, "distance_scale", "must be > 0");
  require(speed_scale > 0.0, "speed_scale", "must be > 0");
}

}  // namespace rcms
