#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcms/core_types.hpp"
#include "rcms/event_log.hpp"
#include "rcms/radio.hpp"
#include "rcms/road.hpp"
#include "rcms/srp/model.hpp"

namespace rcms {

/// Trajectory similarity as seen by the protocol. Without a model the
/// recorded histories are compared.
struct SimilarityProvider {
  const srp::SrpModel* model = nullptr;
  srp::Normalizer normalizer = srp::Normalizer::for_scenario(30.0);
  srp::SimilarityOptions options;

  /// λ_SRP in (0,1]; 1 when either history is too short to compare.
  double operator()(const Trajectory& core, const Trajectory& ordinary) const;
};

/// Services the simulation offers to a clustering scheme.
class SimContext {
 public:
  virtual ~SimContext() = default;

  virtual double now() const = 0;
  virtual std::size_t vehicle_count() const = 0;
  /// Kinematics plus the current traffic index; protocol fields are the scheme's business.
  virtual const VehicleState& state(VehicleId id) const = 0;
  virtual const Trajectory& trajectory(VehicleId id) const = 0;
  virtual std::span<const Vec2> positions() const = 0;
  virtual Vec2 next_heading(VehicleId id) const = 0;
  virtual double distance_to_intersection(VehicleId id) const = 0;
  virtual std::uint64_t approach_token(VehicleId id) const = 0;
  virtual IntersectionId upcoming_intersection(VehicleId id) const = 0;
  virtual TrafficIndex tti() const = 0;
  virtual double max_speed() const = 0;

  /// Transmits one frame (sent_at is set to now).
  virtual void send(Message msg) = 0;
  virtual void schedule_timer(VehicleId vehicle, double at, int kind, std::uint64_t token) = 0;
  virtual EventLog& log() = 0;
  virtual std::mt19937_64& rng() = 0;
  virtual const SimilarityProvider& similarity() const = 0;
};

/// Cluster structure exposed to routers and metrics.
struct ClusterView {
  std::vector<VehicleRole> roles;
  std::vector<VehicleId> head;       // core of the vehicle's region, kBroadcast if unattached
  std::vector<RegionId> region;      // kNoRegion if unattached
  std::vector<VehicleId> cores;      // ascending
  std::vector<std::vector<VehicleId>> heard_cores;  // cores a vehicle currently bridges to (gateways)
};

/// A clustering scheme driven by the engine. All hooks run on the engine thread.
class Scheme {
 public:
  virtual ~Scheme() = default;

  virtual std::string_view name() const = 0;
  /// Called once at t = 0 before the first tick.
  virtual void start(SimContext& ctx) = 0;
  /// Called after every mobility step.
  virtual void on_tick(SimContext& ctx) = 0;
  virtual void on_message(SimContext& ctx, VehicleId receiver, const Message& msg) = 0;
  virtual void on_timer(SimContext& ctx, VehicleId vehicle, int kind, std::uint64_t token) = 0;

  virtual ClusterView view() const = 0;
  /// Global invariant violations, empty when consistent.
  virtual std::vector<std::string> validate(const SimContext& ctx) const = 0;
};

}  // namespace rcms
