#include <doctest.h>

#include <limits>
#include <random>

#include "rcms/routing.hpp"

using namespace rcms;

namespace {

/// Member 0 of core 1, gateway 2 between cores 1 and 3, member 4 of core 3.
struct Chain {
  std::vector<Vec2> positions{{0, 0}, {200, 0}, {400, 0}, {600, 0}, {800, 0}};
  ClusterView view;

  Chain() {
    view.roles = {VehicleRole::Ordinary, VehicleRole::Core, VehicleRole::Gateway, VehicleRole::Core,
                  VehicleRole::Ordinary};
    view.head = {1, 1, 1, 3, 3};
    view.region = {0, 0, 0, 1, 1};
    view.cores = {1, 3};
    view.heard_cores = {{}, {}, {1, 3}, {}, {}};
  }
};

/// Roles consistent with positions: every vehicle joins the nearest core in
/// range; hearing two or more cores makes it a gateway.
ClusterView random_view(const std::vector<Vec2>& pos, std::mt19937_64& rng, double range) {
  const std::size_t n = pos.size();
  ClusterView view;
  view.roles.assign(n, VehicleRole::Unattached);
  view.head.assign(n, kBroadcast);
  view.region.assign(n, kNoRegion);
  view.heard_cores.assign(n, {});
  std::bernoulli_distribution pick(0.2);
  for (VehicleId v = 0; v < n; ++v)
    if (pick(rng)) view.cores.push_back(v);
  for (RegionId r = 0; r < view.cores.size(); ++r) {
    const VehicleId c = view.cores[r];
    view.roles[c] = VehicleRole::Core;
    view.head[c] = c;
    view.region[c] = r;
  }
  for (VehicleId v = 0; v < n; ++v) {
    if (view.roles[v] == VehicleRole::Core) continue;
    double best = std::numeric_limits<double>::infinity();
    for (RegionId r = 0; r < view.cores.size(); ++r) {
      const double d = (pos[v] - pos[view.cores[r]]).norm();
      if (d > range) continue;
      view.heard_cores[v].push_back(view.cores[r]);
      if (d < best) {
        best = d;
        view.head[v] = view.cores[r];
        view.region[v] = r;
      }
    }
    if (view.heard_cores[v].size() >= 2)
      view.roles[v] = VehicleRole::Gateway;
    else if (view.head[v] != kBroadcast)
      view.roles[v] = VehicleRole::Ordinary;
  }
  return view;
}

/// All-pairs hop counts by Floyd-Warshall.
std::vector<std::vector<int>> hop_matrix(const std::vector<std::vector<VehicleId>>& graph) {
  const std::size_t n = graph.size();
  const int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (VehicleId j : graph[i]) d[i][j] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

}  // namespace

TEST_CASE("overlay routing inside one region takes two hops") {
  Chain c;
  const auto path = route_static(RouterKind::Rcms, c.positions, c.view, 250, 0, 2);
  CHECK(path == std::vector<VehicleId>{0, 1, 2});
  CHECK(route_static(RouterKind::Rcms, c.positions, c.view, 250, 3, 3) == std::vector<VehicleId>{3});
}

TEST_CASE("overlay routing crosses regions through the gateway") {
  Chain c;
  const auto graph = overlay_graph(c.positions, c.view, 250);
  CHECK(graph[1] == std::vector<VehicleId>{0, 2});  // no direct core-core edge
  const auto path = overlay_path(graph, 0, 4);
  REQUIRE(path);
  CHECK(*path == std::vector<VehicleId>{0, 1, 2, 3, 4});
  CHECK(hop_matrix(graph)[0][4] == 4);
  CHECK(route_static(RouterKind::Rcms, c.positions, c.view, 250, 0, 4) == *path);

  // Without the gateway the regions are cut apart.
  c.view.roles[2] = VehicleRole::Ordinary;
  try {
    route_static(RouterKind::Rcms, c.positions, c.view, 250, 0, 4);
    FAIL("expected NoRoute");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoRoute);
  }
  RouteProgress progress;
  CHECK(next_hop(RouterKind::Rcms, c.positions, c.view, 250, 0, 4, progress).carry);
  CHECK_THROWS_AS(overlay_path(graph, 0, 9), Error);
}

TEST_CASE("overlay paths are shortest and exist exactly when reachable") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1000);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Vec2> pos(25);
    for (auto& p : pos) p = {u(rng), u(rng)};
    const auto view = random_view(pos, rng, 250);
    const auto graph = overlay_graph(pos, view, 250);
    const auto hops = hop_matrix(graph);
    for (VehicleId a = 0; a < pos.size(); a += 3)
      for (VehicleId b = 0; b < pos.size(); b += 2) {
        const auto path = overlay_path(graph, a, b);
        const bool reachable = hops[a][b] < std::numeric_limits<int>::max() / 4;
        REQUIRE(path.has_value() == reachable);
        if (!path) continue;
        CHECK(static_cast<int>(path->size()) - 1 == hops[a][b]);
        CHECK(path->front() == a);
        CHECK(path->back() == b);
        for (std::size_t k = 1; k < path->size(); ++k) {
          const auto& adj = graph[(*path)[k - 1]];
          CHECK(std::find(adj.begin(), adj.end(), (*path)[k]) != adj.end());
          CHECK((pos[(*path)[k - 1]] - pos[(*path)[k]]).norm() <= 250);
        }
      }
  }
}

TEST_CASE("geographic greedy forwarding") {
  const std::vector<Vec2> pos{{0, 0}, {200, 0}, {400, 0}, {600, 0}, {800, 0}, {100, 50}};
  ClusterView view;
  view.roles.assign(pos.size(), VehicleRole::Unattached);
  view.head.assign(pos.size(), kBroadcast);
  view.region.assign(pos.size(), kNoRegion);
  view.heard_cores.assign(pos.size(), {});
  const auto path = route_static(RouterKind::GpsrLike, pos, view, 250, 0, 4);
  CHECK(path == std::vector<VehicleId>{0, 1, 2, 3, 4});

  // Same hop count as the shortest path in the unit-disk graph.
  std::vector<std::vector<VehicleId>> disk(pos.size());
  for (VehicleId v = 0; v < pos.size(); ++v) disk[v] = neighbors(pos, v, 250);
  CHECK(static_cast<int>(path.size()) - 1 == hop_matrix(disk)[0][4]);

  // Destination in range goes direct; a void leaves the packet with the holder.
  CHECK(route_static(RouterKind::GpsrLike, pos, view, 250, 5, 1) == std::vector<VehicleId>{5, 1});
  const std::vector<Vec2> gap{{0, 0}, {200, 0}, {700, 0}};
  RouteProgress progress;
  const auto stuck = next_hop(RouterKind::GpsrLike, gap, ClusterView{std::vector<VehicleRole>(3), {}, {}, {}, {}}, 250,
                              1, 2, progress);
  CHECK_FALSE(stuck.next);
  CHECK(stuck.carry);
}

TEST_CASE("cluster-head routing visits the source head first and prefers cores") {
  Chain c;
  c.positions[3] = {560, 0};
  c.positions.push_back({640, 0});  // ordinary member of core 3, closer to the target than its core
  c.view.roles.push_back(VehicleRole::Ordinary);
  c.view.head.push_back(3);
  c.view.region.push_back(1);
  c.view.heard_cores.emplace_back();
  RouteProgress progress;
  const auto first = next_hop(RouterKind::CbdrpLike, c.positions, c.view, 250, 0, 4, progress);
  CHECK(first.next == VehicleId{1});
  CHECK(progress.reached_head);
  CHECK(route_static(RouterKind::CbdrpLike, c.positions, c.view, 250, 0, 4) == std::vector<VehicleId>{0, 1, 2, 3, 4});
  CHECK(route_static(RouterKind::GpsrLike, c.positions, c.view, 250, 0, 4) == std::vector<VehicleId>{0, 1, 2, 5, 4});
  CHECK(route_static(RouterKind::CbdrpLike, c.positions, c.view, 250, 3, 4) == std::vector<VehicleId>{3, 4});
}

TEST_CASE("hop budget") {
  std::vector<Vec2> pos;
  for (int i = 0; i < 6; ++i) pos.push_back({200.0 * i, 0});
  ClusterView view;
  view.roles.assign(pos.size(), VehicleRole::Unattached);
  view.head.assign(pos.size(), kBroadcast);
  try {
    route_static(RouterKind::GpsrLike, pos, view, 250, 0, 5, 3);
    FAIL("expected TtlExpired");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TtlExpired);
  }
  CHECK(route_static(RouterKind::GpsrLike, pos, view, 250, 0, 5, 5).size() == 6);
}
