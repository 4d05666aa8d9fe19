#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rcms/scheme.hpp"

namespace rcms {

enum class RouterKind { Rcms, CbdrpLike, GpsrLike };

std::string_view to_string(RouterKind kind);
std::optional<RouterKind> router_from(std::string_view text);

inline constexpr int kHopBudget = 16;

/// Adjacency of the region overlay: members talk to their own core,
/// gateways to every core in range, unattached vehicles to any neighbour.
/// Cores are not linked to each other directly.
std::vector<std::vector<VehicleId>> overlay_graph(std::span<const Vec2> positions, const ClusterView& view,
                                                  double range);

/// Fewest-hop path from `source` to `destination` (inclusive), lowest ids on ties.
std::optional<std::vector<VehicleId>> overlay_path(const std::vector<std::vector<VehicleId>>& graph, VehicleId source,
                                                   VehicleId destination);

/// Per-packet progress a router may keep.
struct RouteProgress {
  bool reached_head = false;  // cluster-head router: packet has left the source's cluster stage
};

/// Next hop decision; empty `next` means no neighbour is usable right now.
struct HopDecision {
  std::optional<VehicleId> next;
  bool carry = false;  // keep the packet and retry later instead of dropping it
};

HopDecision next_hop(RouterKind kind, std::span<const Vec2> positions, const ClusterView& view, double range,
                     VehicleId holder, VehicleId destination, RouteProgress& progress);

/// Applies `next_hop` on a frozen topology with lossless links and returns the
/// visited path. Throws NoRoute when the packet gets stuck and TtlExpired when
/// `hop_budget` hops are not enough.
std::vector<VehicleId> route_static(RouterKind kind, std::span<const Vec2> positions, const ClusterView& view,
                                    double range, VehicleId source, VehicleId destination,
                                    int hop_budget = kHopBudget);

}  // namespace rcms
