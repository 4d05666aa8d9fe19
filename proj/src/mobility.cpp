#include "rcms/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace rcms {

void MobilityConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw Error(Errc::ConfigError, fmt::format("{}: {}", field, rule));
  };
  require(max_speed > 0.0, "max_speed", "must be > 0");
  require(min_desired_speed >= 0.0 && min_desired_speed <= max_speed, "min_desired_speed",
          "must be in [0, max_speed]");
  require(acceleration > 0.0, "acceleration", "must be > 0");
  require(comfortable_decel > 0.0, "comfortable_decel", "must be > 0");
  require(max_decel >= comfortable_decel, "max_decel", "must be >= comfortable_decel");
  require(reaction_time > 0.0, "reaction_time", "must be > 0");
  require(vehicle_length > 0.0, "vehicle_length", "must be > 0");
  require(min_gap >= 0.0, "min_gap", "must be >= 0");
  require(!signals || signal_cycle > 0.0, "signal_cycle", "must be > 0");
  require(green_fraction > 0.0 && green_fraction < 1.0, "green_fraction", "must be in (0,1)");
  require(p_straight >= 0.0 && p_left >= 0.0 && p_right >= 0.0 && p_straight + p_left + p_right > 0.0,
          "turn_probabilities", "must be nonnegative with a positive sum");
}

namespace {

struct LaneKey {
  SegmentId segment;
  bool forward;
  int lane;
  friend auto operator<=>(const LaneKey&, const LaneKey&) = default;
};

// Krauss-style safe speed behind an obstacle moving at `leader_speed` with
// `gap` metres of usable space.
double safe_speed(double gap, double speed, double leader_speed, double decel, double tau) {
  if (gap <= 0.0) return 0.0;
  const double denom = (speed + leader_speed) / (2.0 * decel) + tau;
  return std::max(0.0, leader_speed + (gap - leader_speed * tau) / denom);
}

}  // namespace

CarFollowingMobility::CarFollowingMobility(std::shared_ptr<const RoadNetwork> network,
                                           MobilityConfig config, std::size_t count,
                                           std::uint64_t seed)
    : network_(std::move(network)), config_(config), rng_(seed) {
  config_.validate();
  const auto& segs = network_->segments();
  if (segs.empty()) throw Error(Errc::ConfigError, "road network has no segments");
  std::vector<double> lengths;
  for (const auto& s : segs) lengths.push_back(s.length);
  std::discrete_distribution<std::size_t> pick_segment(lengths.begin(), lengths.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double spacing = config_.vehicle_length + config_.min_gap;

  std::map<LaneKey, std::vector<double>> occupied;
  for (std::size_t i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      LaneMotion m;
      m.id = static_cast<VehicleId>(i);
      m.segment = static_cast<SegmentId>(pick_segment(rng_));
      const auto& seg = segs[m.segment];
      m.forward = unit(rng_) < 0.5;
      m.lane = static_cast<int>(unit(rng_) * seg.lanes_per_direction) % seg.lanes_per_direction;
      m.offset = unit(rng_) * seg.length;
      auto& lane = occupied[{m.segment, m.forward, m.lane}];
      const bool clash = std::any_of(lane.begin(), lane.end(),
                                     [&](double o) { return std::abs(o - m.offset) < spacing; });
      if (clash) continue;
      lane.push_back(m.offset);
      m.desired_speed = config_.min_desired_speed +
                        unit(rng_) * (config_.max_speed - config_.min_desired_speed);
      m.speed = 0.5 * m.desired_speed;
      vehicles_.push_back(m);
      placed = true;
    }
    if (!placed) throw Error(Errc::ConfigError, fmt::format("cannot place {} vehicles on the road network", count));
  }
  for (auto& m : vehicles_) choose_next(m);
}

CarFollowingMobility::CarFollowingMobility(std::shared_ptr<const RoadNetwork> network,
                                           MobilityConfig config, std::vector<LaneMotion> vehicles,
                                           std::uint64_t seed)
    : network_(std::move(network)), config_(config), vehicles_(std::move(vehicles)), rng_(seed) {
  config_.validate();
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& m = vehicles_[i];
    if (m.id != i) throw Error(Errc::ConfigError, "vehicle ids must be dense and ordered");
    if (m.segment >= network_->segments().size())
      throw Error(Errc::ConfigError, fmt::format("vehicle {}: unknown segment {}", m.id, m.segment));
    if (m.next_segment == kNoSegment) choose_next(m);
  }
}

IntersectionId CarFollowingMobility::downstream(const LaneMotion& m) const {
  const auto& seg = network_->segment(m.segment);
  return m.forward ? seg.to : seg.from;
}

Vec2 CarFollowingMobility::travel_unit(SegmentId segment, bool forward) const {
  const Vec2 u = network_->unit(segment);
  return forward ? u : u * -1.0;
}

void CarFollowingMobility::choose_next(LaneMotion& m) {
  const IntersectionId node = downstream(m);
  const Vec2 in = travel_unit(m.segment, m.forward);
  struct Option {
    SegmentId segment;
    bool forward;
    double weight;
  };
  std::vector<Option> options;
  for (SegmentId out : network_->intersection(node).segments) {
    if (out == m.segment) continue;
    const bool fwd = network_->segment(out).from == node;
    const Vec2 u = travel_unit(out, fwd);
    const double cross = in.x * u.y - in.y * u.x;
    double w = 0.0;
    if (in.dot(u) > 0.7) w = config_.p_straight;
    else if (cross > 0.0) w = config_.p_left;
    else w = config_.p_right;
    options.push_back({out, fwd, w});
  }
  if (options.empty()) {
    m.next_segment = m.segment;  // dead end: U-turn
    m.next_forward = !m.forward;
    return;
  }
  double total = 0.0;
  for (const auto& o : options) total += o.weight;
  if (total <= 0.0) {
    for (auto& o : options) o.weight = 1.0;
    total = static_cast<double>(options.size());
  }
  double draw = std::uniform_real_distribution<double>(0.0, total)(rng_);
  for (const auto& o : options) {
    draw -= o.weight;
    if (draw < 0.0 || &o == &options.back()) {
      m.next_segment = o.segment;
      m.next_forward = o.forward;
      return;
    }
  }
}

bool CarFollowingMobility::green_for(SegmentId segment, bool forward) const {
  if (!config_.signals) return true;
  const auto& seg = network_->segment(segment);
  const IntersectionId node = forward ? seg.to : seg.from;
  if (network_->intersection(node).segments.size() < 3) return true;
  const Vec2 u = network_->unit(segment);
  const bool east_west = std::abs(u.x) >= std::abs(u.y);
  const double phase = std::fmod(time_, config_.signal_cycle);
  const bool ew_green = phase < config_.green_fraction * config_.signal_cycle;
  return east_west == ew_green;
}

void CarFollowingMobility::step(double dt) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidArgument, "mobility step requires dt > 0");
  const double spacing = config_.vehicle_length + config_.min_gap;

  std::map<LaneKey, std::vector<std::size_t>> lanes;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    const auto& m = vehicles_[i];
    lanes[{m.segment, m.forward, m.lane}].push_back(i);
  }
  for (auto& [key, idx] : lanes)
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return vehicles_[a].offset < vehicles_[b].offset ||
             (vehicles_[a].offset == vehicles_[b].offset && a < b);
    });

  std::vector<double> next_speed(vehicles_.size(), 0.0);
  for (const auto& [key, idx] : lanes) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& m = vehicles_[idx[k]];
      const auto& seg = network_->segment(m.segment);
      double v = std::min({m.desired_speed, config_.max_speed, m.speed + config_.acceleration * dt});
      auto constrain = [&](double gap, double leader_speed) {
        v = std::min(v, safe_speed(gap, m.speed, leader_speed, config_.comfortable_decel,
                                   config_.reaction_time));
        v = std::min(v, std::max(0.0, gap / dt));
      };
      if (k + 1 < idx.size()) {
        const auto& lead = vehicles_[idx[k + 1]];
        constrain(lead.offset - m.offset - spacing, lead.speed);
        next_speed[idx[k]] = std::max(0.0, v);
        continue;
      }
      const double to_end = seg.length - m.offset;
      if (!green_for(m.segment, m.forward)) {
        const double stopping = m.speed * m.speed / (2.0 * config_.max_decel);
        if (to_end >= stopping - 1e-9) constrain(to_end, 0.0);
      }
      const auto& next_seg = network_->segment(m.next_segment);
      const int next_lane = std::min(m.lane, next_seg.lanes_per_direction - 1);
      if (auto it = lanes.find({m.next_segment, m.next_forward, next_lane}); it != lanes.end()) {
        const auto& tail = vehicles_[it->second.front()];
        if (tail.id != m.id) constrain(to_end + tail.offset - spacing, tail.speed);
      }
      next_speed[idx[k]] = std::max(0.0, v);
    }
  }

  std::vector<std::size_t> crossing;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& m = vehicles_[i];
    const double moved = next_speed[i] * dt;
    monitor_.record(m.segment, moved, dt);
    m.acceleration = (next_speed[i] - m.speed) / dt;
    m.speed = next_speed[i];
    m.offset += moved;
    if (m.offset > network_->segment(m.segment).length) crossing.push_back(i);
  }

  // Entering vehicles may merge from several approaches; admit them in id order
  // and hold back any that would land inside the spacing of the lane's tail.
  for (std::size_t i : crossing) {
    auto& m = vehicles_[i];
    const double length = network_->segment(m.segment).length;
    const double residual = m.offset - length;
    const auto& next_seg = network_->segment(m.next_segment);
    const int next_lane = std::min(m.lane, next_seg.lanes_per_direction - 1);
    double tail = std::numeric_limits<double>::infinity();
    for (const auto& other : vehicles_) {
      if (&other == &m) continue;
      if (other.segment == m.next_segment && other.forward == m.next_forward && other.lane == next_lane &&
          other.offset <= next_seg.length)
        tail = std::min(tail, other.offset);
    }
    const double limit = tail - spacing;
    if (limit < 0.0) {
      m.offset = length;
      m.acceleration = (0.0 - (m.speed)) / dt;
      m.speed = 0.0;
      continue;
    }
    m.segment = m.next_segment;
    m.forward = m.next_forward;
    m.lane = next_lane;
    m.offset = std::min(residual, limit);
    ++m.entries;
    choose_next(m);
  }
  time_ += dt;
}

VehicleState CarFollowingMobility::state(VehicleId id) const {
  const auto& m = vehicles_.at(id);
  const auto& seg = network_->segment(m.segment);
  const double along = std::clamp(m.offset / seg.length, 0.0, 1.0);
  const double fraction = m.forward ? along : 1.0 - along;
  const Vec2 dir = travel_unit(m.segment, m.forward);
  VehicleState s;
  s.vehicle_id = id;
  s.segment_id = m.segment;
  s.segment_fraction = fraction;
  s.position = network_->point_on(m.segment, fraction);
  s.direction = dir;
  s.speed = dir * m.speed;
  s.acceleration = dir * m.acceleration;
  s.timestamp = time_;
  return s;
}

Vec2 CarFollowingMobility::next_heading(VehicleId id) const {
  const auto& m = vehicles_.at(id);
  return travel_unit(m.next_segment, m.next_forward);
}

double CarFollowingMobility::distance_to_intersection(VehicleId id) const {
  const auto& m = vehicles_.at(id);
  return std::max(0.0, network_->segment(m.segment).length - m.offset);
}

std::uint64_t CarFollowingMobility::approach_token(VehicleId id) const { return vehicles_.at(id).entries; }

IntersectionId CarFollowingMobility::upcoming_intersection(VehicleId id) const { return downstream(vehicles_.at(id)); }

TraceMobility::TraceMobility(std::shared_ptr<const RoadNetwork> network,
                             std::map<VehicleId, Trajectory> trajectories)
    : network_(std::move(network)) {
  for (auto& [source, traj] : trajectories) {
    if (traj.empty()) continue;
    const auto dense = static_cast<VehicleId>(tracks_.size());
    std::vector<VehicleState> samples(traj.begin(), traj.end());
    for (auto& s : samples) s.vehicle_id = dense;
    tracks_.push_back(std::move(samples));
    source_ids_.push_back(source);
  }
  for (std::size_t i = 0; i < tracks_.size(); ++i) current_.push_back(interpolate(i, 0.0));
}

VehicleState TraceMobility::interpolate(std::size_t index, double t) const {
  const auto& track = tracks_[index];
  VehicleState s;
  if (t <= track.front().timestamp) {
    s = track.front();
  } else if (t >= track.back().timestamp) {
    s = track.back();
  } else {
    const auto hi = std::upper_bound(track.begin(), track.end(), t,
                                     [](double v, const VehicleState& x) { return v < x.timestamp; });
    const auto& b = *hi;
    const auto& a = *(hi - 1);
    const double w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    s = a;
    s.position = a.position + (b.position - a.position) * w;
    s.speed = a.speed + (b.speed - a.speed) * w;
    s.acceleration = (b.speed - a.speed) * (1.0 / (b.timestamp - a.timestamp));
    const auto proj = network_->project(s.position);
    s.segment_id = proj.segment_id;
    s.segment_fraction = proj.fraction;
    if (s.speed.norm() > 0.0) s.direction = s.speed * (1.0 / s.speed.norm());
  }
  s.timestamp = t;
  s.vehicle_id = static_cast<VehicleId>(index);
  return s;
}

void TraceMobility::step(double dt) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidArgument, "mobility step requires dt > 0");
  const double next = time_ + dt;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    auto updated = interpolate(i, next);
    const double moved = (updated.position - current_[i].position).norm();
    if (current_[i].segment_id != kNoSegment) monitor_.record(current_[i].segment_id, moved, dt);
    current_[i] = updated;
  }
  time_ = next;
}

VehicleState TraceMobility::state(VehicleId id) const { return current_.at(id); }

Vec2 TraceMobility::next_heading(VehicleId id) const {
  const auto& track = tracks_.at(id);
  const auto it = std::upper_bound(track.begin(), track.end(), time_,
                                   [](double v, const VehicleState& x) { return v < x.timestamp; });
  // The heading over the next recorded step stands in for the upcoming turn.
  if (it != track.end() && it != track.begin()) {
    const Vec2 d = it->position - current_[id].position;
    if (d.norm() > 0.0) return d * (1.0 / d.norm());
  }
  return current_.at(id).heading();
}

double TraceMobility::distance_to_intersection(VehicleId id) const {
  const auto& s = current_.at(id);
  if (s.segment_id == kNoSegment) return std::numeric_limits<double>::infinity();
  const auto& seg = network_->segment(s.segment_id);
  const bool forward = s.heading().dot(network_->unit(s.segment_id)) >= 0.0;
  return (forward ? 1.0 - s.segment_fraction : s.segment_fraction) * seg.length;
}

std::uint64_t TraceMobility::approach_token(VehicleId id) const {
  const auto& s = current_.at(id);
  const bool forward = s.heading().dot(network_->unit(s.segment_id)) >= 0.0;
  return (static_cast<std::uint64_t>(s.segment_id) << 1) | (forward ? 1u : 0u);
}

IntersectionId TraceMobility::upcoming_intersection(VehicleId id) const {
  const auto& s = current_.at(id);
  if (s.segment_id == kNoSegment) return kNoIntersection;
  const auto& seg = network_->segment(s.segment_id);
  return s.heading().dot(network_->unit(s.segment_id)) >= 0.0 ? seg.to : seg.from;
}

KinematicMobility::KinematicMobility(std::vector<Vehicle> vehicles)
    : vehicles_(std::move(vehicles)), extra_(vehicles_.size()) {
  for (std::size_t i = 0; i < vehicles_.size(); ++i) set_velocity(static_cast<VehicleId>(i), vehicles_[i].velocity);
}

void KinematicMobility::set_velocity(VehicleId id, Vec2 velocity) {
  auto& e = extra_.at(id);
  e.acceleration = velocity - vehicles_.at(id).velocity;
  vehicles_[id].velocity = velocity;
  if (velocity.norm() > 0.0) e.direction = velocity * (1.0 / velocity.norm());
}

void KinematicMobility::set_approach(VehicleId id, double distance, Vec2 next_heading, IntersectionId intersection) {
  auto& e = extra_.at(id);
  e.approach = distance;
  e.next_heading = next_heading;
  e.has_next = true;
  e.intersection = intersection;
  ++e.token;
}

void KinematicMobility::step(double dt) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidArgument, "mobility step requires dt > 0");
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& v = vehicles_[i];
    auto& e = extra_[i];
    v.position = v.position + v.velocity * dt;
    e.acceleration = Vec2{};
    if (std::isfinite(e.approach)) e.approach = std::max(0.0, e.approach - v.velocity.norm() * dt);
  }
  time_ += dt;
}

VehicleState KinematicMobility::state(VehicleId id) const {
  const auto& v = vehicles_.at(id);
  const auto& e = extra_[id];
  VehicleState s;
  s.vehicle_id = id;
  s.position = v.position;
  s.speed = v.velocity;
  s.acceleration = e.acceleration;
  s.direction = e.direction;
  s.timestamp = time_;
  return s;
}

Vec2 KinematicMobility::next_heading(VehicleId id) const {
  const auto& e = extra_.at(id);
  return e.has_next ? e.next_heading : e.direction;
}

double KinematicMobility::distance_to_intersection(VehicleId id) const { return extra_.at(id).approach; }

std::uint64_t KinematicMobility::approach_token(VehicleId id) const { return extra_.at(id).token; }

IntersectionId KinematicMobility::upcoming_intersection(VehicleId id) const { return extra_.at(id).intersection; }

}  // namespace rcms
