#include "rcms/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

namespace rcms {

namespace {

bool in_range(const VehicleState& a, const VehicleState& b, double range) {
  return relative_distance(a, b) <= range;
}

/// Greedy election over `order`; `covers(h, v)` says whether head h covers v.
template <typename Covers, typename Prefer>
ClusterAssignment elect(std::span<const VehicleState> states, const std::vector<double>& value, Covers covers,
                        Prefer prefer) {
  const std::size_t n = states.size();
  std::vector<VehicleId> order(n);
  std::iota(order.begin(), order.end(), VehicleId{0});
  std::sort(order.begin(), order.end(), [&](VehicleId a, VehicleId b) {
    return std::tie(value[a], a) < std::tie(value[b], b);
  });
  std::vector<VehicleId> heads;
  for (VehicleId v : order) {
    const bool covered = std::any_of(heads.begin(), heads.end(), [&](VehicleId h) { return covers(h, v); });
    if (!covered) heads.push_back(v);
  }
  std::sort(heads.begin(), heads.end());

  ClusterAssignment out;
  out.head.assign(n, 0);
  for (VehicleId v = 0; v < n; ++v) {
    if (std::binary_search(heads.begin(), heads.end(), v)) {
      out.head[v] = v;
      continue;
    }
    std::optional<VehicleId> best;
    for (VehicleId h : heads) {
      if (!covers(h, v)) continue;
      if (!best || prefer(v, h, *best)) best = h;
    }
    out.head[v] = *best;
  }
  return out;
}

}  // namespace

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::VmascLike: return "vmasc_like";
    case BaselineKind::MscaLike: return "msca_like";
    case BaselineKind::CbdrpLike: return "cbdrp_like";
    case BaselineKind::GpsrLike: return "gpsr_like";
  }
  return "?";
}

double link_lifetime(const VehicleState& a, const VehicleState& b, double range) {
  const Vec2 dp = b.position - a.position;
  const Vec2 dv = b.speed - a.speed;
  const double c = dp.dot(dp) - range * range;
  if (c > 0.0) return 0.0;
  const double qa = dv.dot(dv);
  if (qa == 0.0) return std::numeric_limits<double>::infinity();
  // |dp + dv t|^2 = R^2, positive root.
  const double qb = 2.0 * dp.dot(dv);
  const double disc = qb * qb - 4.0 * qa * c;
  return (-qb + std::sqrt(disc)) / (2.0 * qa);
}

double mean_relative_speed(std::span<const VehicleState> states, VehicleId v, double range) {
  double sum = 0.0;
  std::size_t count = 0;
  for (VehicleId u = 0; u < states.size(); ++u) {
    if (u == v || !in_range(states[u], states[v], range)) continue;
    sum += relative_speed(states[u], states[v]);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double mean_neighbor_distance(std::span<const VehicleState> states, VehicleId v, double range) {
  double sum = 0.0;
  std::size_t count = 0;
  for (VehicleId u = 0; u < states.size(); ++u) {
    if (u == v || !in_range(states[u], states[v], range)) continue;
    sum += relative_distance(states[u], states[v]);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

ClusterAssignment vmasc_like_step(std::span<const VehicleState> states, double range) {
  std::vector<double> value(states.size());
  for (VehicleId v = 0; v < states.size(); ++v) value[v] = mean_relative_speed(states, v, range);
  auto covers = [&](VehicleId h, VehicleId v) { return in_range(states[h], states[v], range); };
  auto prefer = [&](VehicleId v, VehicleId h, VehicleId current) {
    return std::tuple(relative_speed(states[v], states[h]), h) <
           std::tuple(relative_speed(states[v], states[current]), current);
  };
  return elect(states, value, covers, prefer);
}

ClusterAssignment msca_like_step(std::span<const VehicleState> states, double range, double min_link_lifetime) {
  std::vector<double> value(states.size());
  for (VehicleId v = 0; v < states.size(); ++v) value[v] = mean_neighbor_distance(states, v, range);
  auto covers = [&](VehicleId h, VehicleId v) {
    return in_range(states[h], states[v], range) && link_lifetime(states[h], states[v], range) >= min_link_lifetime;
  };
  auto prefer = [&](VehicleId v, VehicleId h, VehicleId current) {
    const double lh = link_lifetime(states[v], states[h], range);
    const double lc = link_lifetime(states[v], states[current], range);
    return lh > lc || (lh == lc && h < current);
  };
  return elect(states, value, covers, prefer);
}

BaselineScheme::BaselineScheme(BaselineKind kind, double range, double start_time, double min_link_lifetime)
    : kind_(kind), range_(range), start_time_(start_time), min_link_lifetime_(min_link_lifetime) {
  if (kind != BaselineKind::VmascLike && kind != BaselineKind::MscaLike)
    throw Error(Errc::InvalidArgument, "baseline clustering scheme must be vmasc_like or msca_like");
}

std::string_view BaselineScheme::name() const { return to_string(kind_); }

void BaselineScheme::start(SimContext& ctx) {
  assignment_.head.assign(ctx.vehicle_count(), kBroadcast);
  attached_before_.assign(ctx.vehicle_count(), 0);
}

void BaselineScheme::on_tick(SimContext& ctx) {
  if (ctx.now() < start_time_) return;
  const std::size_t n = ctx.vehicle_count();
  std::vector<VehicleState> states(n);
  for (VehicleId v = 0; v < n; ++v) states[v] = ctx.state(v);
  ClusterAssignment next = kind_ == BaselineKind::VmascLike ? vmasc_like_step(states, range_)
                                                            : msca_like_step(states, range_, min_link_lifetime_);

  auto& log = ctx.log();
  const double now = ctx.now();
  // Clusters whose head stepped down end; new heads open clusters.
  for (auto it = region_of_head_.begin(); it != region_of_head_.end();) {
    if (!next.is_head(it->first)) {
      log.append(now, EventKind::RegionEnd, it->first, it->second, "head_lost");
      it = region_of_head_.erase(it);
    } else {
      ++it;
    }
  }
  for (VehicleId v = 0; v < n; ++v) {
    if (next.is_head(v) && !region_of_head_.count(v)) {
      region_of_head_[v] = next_region_;
      log.append(now, EventKind::RegionCreate, v, next_region_, "head");
      ++next_region_;
    }
  }
  for (VehicleId v = 0; v < n; ++v) {
    if (next.head[v] == assignment_.head[v]) continue;
    log.append(now, EventKind::Construct, v, std::nullopt, attached_before_[v] ? "re" : "initial");
    log.append(now, EventKind::Join, v, region_of_head_.at(next.head[v]), std::to_string(next.head[v]));
    attached_before_[v] = 1;
  }
  assignment_ = std::move(next);
}

ClusterView BaselineScheme::view() const {
  ClusterView out;
  const std::size_t n = assignment_.head.size();
  out.roles.assign(n, VehicleRole::Unattached);
  out.head.assign(n, kBroadcast);
  out.region.assign(n, kNoRegion);
  out.heard_cores.resize(n);
  for (VehicleId v = 0; v < n; ++v) {
    const VehicleId h = assignment_.head[v];
    if (h == kBroadcast) continue;
    out.head[v] = h;
    out.region[v] = region_of_head_.at(h);
    out.roles[v] = h == v ? VehicleRole::Core : VehicleRole::Ordinary;
  }
  for (const auto& [head, region] : region_of_head_) out.cores.push_back(head);
  return out;
}

std::vector<std::string> BaselineScheme::validate(const SimContext& ctx) const {
  std::vector<std::string> problems;
  for (VehicleId v = 0; v < assignment_.head.size(); ++v) {
    const VehicleId h = assignment_.head[v];
    if (h == kBroadcast) continue;
    if (assignment_.head[h] != h) problems.push_back(fmt::format("vehicle {} follows non-head {}", v, h));
    if (!region_of_head_.count(h)) problems.push_back(fmt::format("head {} has no cluster", h));
    if (relative_distance(ctx.state(v), ctx.state(h)) > range_ + 1e-9)
      problems.push_back(fmt::format("vehicle {} out of range of head {}", v, h));
  }
  return problems;
}

}  // namespace rcms
