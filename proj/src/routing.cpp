#include "rcms/routing.hpp"

#include <algorithm>
#include <deque>

#include <fmt/format.h>

namespace rcms {

namespace {

double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

void link(std::vector<std::vector<VehicleId>>& graph, VehicleId a, VehicleId b) {
  if (a == b) return;
  graph[a].push_back(b);
  graph[b].push_back(a);
}

/// Neighbour strictly closer to the destination than the holder, closest first.
std::optional<VehicleId> greedy(std::span<const Vec2> positions, double range, VehicleId holder, VehicleId destination,
                                const std::vector<VehicleRole>* prefer_cores) {
  const Vec2 target = positions[destination];
  const double own = distance(positions[holder], target);
  std::optional<VehicleId> best;
  double best_distance = own;
  bool best_is_core = false;
  for (VehicleId u : neighbors(positions, holder, range)) {
    const double d = distance(positions[u], target);
    if (d >= own) continue;
    const bool core = prefer_cores && (*prefer_cores)[u] == VehicleRole::Core;
    if (!best || (core && !best_is_core) || (core == best_is_core && d < best_distance)) {
      best = u;
      best_distance = d;
      best_is_core = core;
    }
  }
  return best;
}

}  // namespace

std::string_view to_string(RouterKind kind) {
  switch (kind) {
    case RouterKind::Rcms: return "rcms";
    case RouterKind::CbdrpLike: return "cbdrp_like";
    case RouterKind::GpsrLike: return "gpsr_like";
  }
  return "?";
}

std::optional<RouterKind> router_from(std::string_view text) {
  if (text == "rcms") return RouterKind::Rcms;
  if (text == "cbdrp_like") return RouterKind::CbdrpLike;
  if (text == "gpsr_like") return RouterKind::GpsrLike;
  return std::nullopt;
}

std::vector<std::vector<VehicleId>> overlay_graph(std::span<const Vec2> positions, const ClusterView& view,
                                                  double range) {
  const std::size_t n = positions.size();
  std::vector<std::vector<VehicleId>> graph(n);
  auto close = [&](VehicleId a, VehicleId b) { return distance(positions[a], positions[b]) <= range; };
  for (VehicleId v = 0; v < n; ++v) {
    switch (view.roles[v]) {
      case VehicleRole::Core:
        break;
      case VehicleRole::Ordinary:
        if (view.head[v] != kBroadcast && close(v, view.head[v])) link(graph, v, view.head[v]);
        break;
      case VehicleRole::Gateway:
        for (VehicleId c : view.cores) {
          if (close(v, c)) link(graph, v, c);
        }
        break;
      case VehicleRole::Unattached:
        for (VehicleId u : neighbors(positions, v, range)) link(graph, v, u);
        break;
    }
  }
  for (auto& adj : graph) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  return graph;
}

std::optional<std::vector<VehicleId>> overlay_path(const std::vector<std::vector<VehicleId>>& graph, VehicleId source,
                                                   VehicleId destination) {
  if (source >= graph.size() || destination >= graph.size())
    throw Error(Errc::UnknownVehicle, fmt::format("route endpoint outside fleet of {}", graph.size()));
  if (source == destination) return std::vector<VehicleId>{source};
  std::vector<VehicleId> parent(graph.size(), kBroadcast);
  parent[source] = source;
  std::deque<VehicleId> queue{source};
  while (!queue.empty()) {
    const VehicleId v = queue.front();
    queue.pop_front();
    for (VehicleId u : graph[v]) {
      if (parent[u] != kBroadcast) continue;
      parent[u] = v;
      if (u == destination) {
        std::vector<VehicleId> path{u};
        while (path.back() != source) path.push_back(parent[path.back()]);
        std::reverse(path.begin(), path.end());
        return path;
      }
      queue.push_back(u);
    }
  }
  return std::nullopt;
}

HopDecision next_hop(RouterKind kind, std::span<const Vec2> positions, const ClusterView& view, double range,
                     VehicleId holder, VehicleId destination, RouteProgress& progress) {
  if (holder == destination) return {};
  switch (kind) {
    case RouterKind::Rcms: {
      const auto path = overlay_path(overlay_graph(positions, view, range), holder, destination);
      if (!path) return {std::nullopt, true};
      return {(*path)[1], false};
    }
    case RouterKind::CbdrpLike: {
      if (distance(positions[holder], positions[destination]) <= range) return {destination, false};
      if (!progress.reached_head) {
        progress.reached_head = true;
        const VehicleId head = view.head[holder];
        if (view.roles[holder] != VehicleRole::Core && head != kBroadcast &&
            distance(positions[holder], positions[head]) <= range)
          return {head, false};
      }
      const auto next = greedy(positions, range, holder, destination, &view.roles);
      return {next, !next.has_value()};
    }
    case RouterKind::GpsrLike: {
      if (distance(positions[holder], positions[destination]) <= range) return {destination, false};
      const auto next = greedy(positions, range, holder, destination, nullptr);
      return {next, !next.has_value()};
    }
  }
  return {};
}

std::vector<VehicleId> route_static(RouterKind kind, std::span<const Vec2> positions, const ClusterView& view,
                                    double range, VehicleId source, VehicleId destination, int hop_budget) {
  if (source >= positions.size() || destination >= positions.size())
    throw Error(Errc::UnknownVehicle, fmt::format("route endpoint outside fleet of {}", positions.size()));
  std::vector<VehicleId> path{source};
  RouteProgress progress;
  while (path.back() != destination) {
    if (static_cast<int>(path.size()) - 1 >= hop_budget)
      throw Error(Errc::TtlExpired, fmt::format("no delivery within {} hops", hop_budget));
    const HopDecision hop = next_hop(kind, positions, view, range, path.back(), destination, progress);
    if (!hop.next)
      throw Error(Errc::NoRoute, fmt::format("vehicle {} has no usable next hop towards {}", path.back(), destination));
    path.push_back(*hop.next);
  }
  return path;
}

}  // namespace rcms
