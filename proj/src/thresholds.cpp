#include "rcms/thresholds.hpp"

#include <cmath>

#include <fmt/format.h>

namespace rcms {

double cooperative_threshold(double relative_speed, double distance, double tti, double lambda_srp,
                             double congestion_threshold) {
  const double base = std::exp(-std::abs(relative_speed) * std::abs(distance));
  return tti > congestion_threshold ? lambda_srp * base : base;
}

double cooperative_threshold(const VehicleState& ordinary, const VehicleState& core, const TrafficIndex& tti,
                             double lambda_srp, const ThresholdScaling& scaling, double congestion_threshold) {
  return cooperative_threshold(relative_speed(ordinary, core) * scaling.speed,
                               relative_distance(ordinary, core) * scaling.distance, tti.value, lambda_srp,
                               congestion_threshold);
}

namespace {

double mean_distance(const VehicleState& candidate, std::span<const VehicleState> members) {
  if (members.empty()) throw Error(Errc::EmptyRegion, "competitive threshold needs at least one member");
  double sum = 0.0;
  for (const auto& m : members) sum += relative_distance(candidate, m);
  return sum / static_cast<double>(members.size());
}

}  // namespace

double competitive_threshold(const VehicleState& candidate, std::span<const VehicleState> members,
                             double lambda_srp) {
  return lambda_srp * mean_distance(candidate, members);
}

double replacement_score(const VehicleState& candidate, std::span<const VehicleState> members, double lambda_srp,
                         ReplacementMode mode, const ThresholdScaling& scaling) {
  if (mode == ReplacementMode::Verbatim) return competitive_threshold(candidate, members, lambda_srp);
  return lambda_srp * std::exp(-mean_distance(candidate, members) * scaling.distance);
}

double aggregation_threshold(std::span<const std::pair<double, double>> eta_and_tau) {
  if (eta_and_tau.size() < 2)
    throw Error(Errc::TooFewCores, fmt::format("aggregation needs two cores, got {}", eta_and_tau.size()));
  double num = 0.0;
  double den = 0.0;
  for (const auto& [eta, tau] : eta_and_tau) {
    if (!(tau > 0.0)) throw Error(Errc::InvalidArgument, "cooperative thresholds must be > 0");
    num += std::exp(-eta) * tau;
    den += tau;
  }
  return num / den;
}

double aggregation_threshold(const VehicleState& gateway,
                             std::span<const std::pair<VehicleState, double>> cores_and_tau,
                             const ThresholdScaling& scaling) {
  std::vector<std::pair<double, double>> terms;
  terms.reserve(cores_and_tau.size());
  for (const auto& [core, tau] : cores_and_tau)
    terms.emplace_back(relative_distance(gateway, core) * scaling.distance, tau);
  return aggregation_threshold(terms);
}

double decomposition_value(double distance, double relative_speed) {
  return (1.0 - std::exp(-std::abs(distance))) / (1.0 + std::exp(-std::abs(relative_speed)));
}

double decomposition_value(const VehicleState& core, const VehicleState& member, const ThresholdScaling& scaling) {
  return decomposition_value(relative_distance(core, member) * scaling.distance,
                             relative_speed(core, member) * scaling.speed);
}

}  // namespace rcms
