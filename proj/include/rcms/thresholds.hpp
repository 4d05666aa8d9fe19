#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rcms/core_types.hpp"
#include "rcms/road.hpp"

namespace rcms {

/// Factors turning metres and m/s into the dimensionless quantities used in
/// the exponentials below. Unit factors reproduce the raw formulas.
struct ThresholdScaling {
  double distance = 1.0 / 250.0;
  double speed = 1.0 / 30.0;

  static ThresholdScaling from(const ProtocolConfig& config) { return {config.distance_scale, config.speed_scale}; }
  static ThresholdScaling unit() { return {1.0, 1.0}; }
};

/// exp(-Δs·Δd) in smooth traffic (δ_TTI <= congestion threshold, including
/// free flow) and λ·exp(-Δs·Δd) above it.
double cooperative_threshold(double relative_speed, double distance, double tti, double lambda_srp,
                             double congestion_threshold = 1.5);
double cooperative_threshold(const VehicleState& ordinary, const VehicleState& core, const TrafficIndex& tti,
                             double lambda_srp, const ThresholdScaling& scaling = {},
                             double congestion_threshold = 1.5);

/// λ times the mean distance (m) from the candidate to the members.
/// Throws EmptyRegion without members.
double competitive_threshold(const VehicleState& candidate, std::span<const VehicleState> members,
                             double lambda_srp);

/// Score maximised when a replacement core is chosen. `Verbatim` is
/// competitive_threshold; `Centered` is λ·exp(-scaled mean distance).
double replacement_score(const VehicleState& candidate, std::span<const VehicleState> members, double lambda_srp,
                         ReplacementMode mode, const ThresholdScaling& scaling = {});

/// Weighted mean of exp(-η_i) with weights τ_i. Throws TooFewCores for fewer
/// than two entries and InvalidArgument for non-positive weights.
double aggregation_threshold(std::span<const std::pair<double, double>> eta_and_tau);
double aggregation_threshold(const VehicleState& gateway,
                             std::span<const std::pair<VehicleState, double>> cores_and_tau,
                             const ThresholdScaling& scaling = {});

/// (1 - exp(-|Δd|)) / (1 + exp(-|Δv|)), in [0,1).
double decomposition_value(double distance, double relative_speed);
double decomposition_value(const VehicleState& core, const VehicleState& member,
                           const ThresholdScaling& scaling = {});

}  // namespace rcms
