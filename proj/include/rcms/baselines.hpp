#pragma once

#include <limits>
#include <map>
#include <span>
#include <vector>

#include "rcms/scheme.hpp"

namespace rcms {

enum class BaselineKind { VmascLike, MscaLike, CbdrpLike, GpsrLike };

std::string_view to_string(BaselineKind kind);

/// head[v] is the cluster head of v; heads are their own head.
struct ClusterAssignment {
  std::vector<VehicleId> head;

  bool is_head(VehicleId v) const { return head[v] == v; }
};

/// Seconds until two vehicles moving at constant velocity are more than
/// `range` apart; 0 if they already are, infinity if they never separate.
double link_lifetime(const VehicleState& a, const VehicleState& b, double range);

/// Mean |relative speed| to the one-hop neighbours (0 without neighbours).
double mean_relative_speed(std::span<const VehicleState> states, VehicleId v, double range);
/// Mean distance to the one-hop neighbours (0 without neighbours).
double mean_neighbor_distance(std::span<const VehicleState> states, VehicleId v, double range);

/// Relative-mobility clustering. Vehicles are visited in ascending
/// (mean relative speed, id); one that no elected head covers becomes a head,
/// so every local minimum is a head. Others join the head in range with the
/// lowest relative speed to them (ties by lowest id).
ClusterAssignment vmasc_like_step(std::span<const VehicleState> states, double range);

/// Centre-position clustering. Same election over (mean neighbour distance, id),
/// but a head only covers vehicles whose link lifetime to it is at least
/// `min_link_lifetime`; members pick the covering head with the longest link.
ClusterAssignment msca_like_step(std::span<const VehicleState> states, double range, double min_link_lifetime);

/// Recomputes a baseline assignment every tick and reports clusters through
/// the same log events as RCMS. A cluster lives as long as its head stays a head.
class BaselineScheme final : public Scheme {
 public:
  BaselineScheme(BaselineKind kind, double range, double start_time, double min_link_lifetime = 5.0);

  std::string_view name() const override;
  void start(SimContext& ctx) override;
  void on_tick(SimContext& ctx) override;
  void on_message(SimContext&, VehicleId, const Message&) override {}
  void on_timer(SimContext&, VehicleId, int, std::uint64_t) override {}
  ClusterView view() const override;
  std::vector<std::string> validate(const SimContext& ctx) const override;

  const ClusterAssignment& assignment() const { return assignment_; }

 private:
  BaselineKind kind_;
  double range_;
  double start_time_;
  double min_link_lifetime_;
  ClusterAssignment assignment_;
  std::vector<std::uint8_t> attached_before_;
  std::map<VehicleId, RegionId> region_of_head_;
  RegionId next_region_ = 0;
};

}  // namespace rcms
