#include "rcms/road.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <queue>

#include <fmt/format.h>

#include "rcms/keyvalue.hpp"

namespace rcms {

RoadNetwork::RoadNetwork(std::vector<Intersection> intersections, std::vector<RoadSegment> segments)
    : intersections_(std::move(intersections)), segments_(std::move(segments)) {
  auto fail = [](const std::string& msg) { throw Error(Errc::ConfigError, msg); };
  if (intersections_.empty()) fail("road network has no intersections");
  for (std::size_t i = 0; i < intersections_.size(); ++i) {
    if (intersections_[i].id != i) fail(fmt::format("intersection ids must be dense; found {} at {}", intersections_[i].id, i));
    intersections_[i].segments.clear();
  }
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    auto& s = segments_[i];
    if (s.segment_id != i) fail(fmt::format("segment ids must be dense; found {} at {}", s.segment_id, i));
    if (s.from >= intersections_.size() || s.to >= intersections_.size() || s.from == s.to)
      fail(fmt::format("segment {}: invalid endpoints", s.segment_id));
    if (!(s.length > 0.0)) fail(fmt::format("segment {}: length must be > 0", s.segment_id));
    if (!(s.free_flow_speed > 0.0)) fail(fmt::format("segment {}: free_flow_speed must be > 0", s.segment_id));
    if (!(s.weight > 0.0)) fail(fmt::format("segment {}: weight must be > 0", s.segment_id));
    if (s.lanes_per_direction < 1) fail(fmt::format("segment {}: lanes_per_direction must be >= 1", s.segment_id));
    intersections_[s.from].segments.push_back(s.segment_id);
    intersections_[s.to].segments.push_back(s.segment_id);
  }

  std::vector<bool> seen(intersections_.size(), false);
  std::queue<IntersectionId> frontier;
  frontier.push(0);
  seen[0] = true;
  while (!frontier.empty()) {
    const auto at = frontier.front();
    frontier.pop();
    for (auto sid : intersections_[at].segments) {
      const auto next = other_end(sid, at);
      if (!seen[next]) {
        seen[next] = true;
        frontier.push(next);
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) fail("road network is not connected");

  extent_min_ = extent_max_ = intersections_.front().position;
  for (const auto& in : intersections_) {
    extent_min_.x = std::min(extent_min_.x, in.position.x);
    extent_min_.y = std::min(extent_min_.y, in.position.y);
    extent_max_.x = std::max(extent_max_.x, in.position.x);
    extent_max_.y = std::max(extent_max_.y, in.position.y);
  }
}

RoadNetwork RoadNetwork::grid(double extent, double block_length, double free_flow_speed,
                              int lanes_per_direction) {
  if (!(extent > 0.0) || !(block_length > 0.0))
    throw Error(Errc::ConfigError, "grid extent and block length must be > 0");
  const auto blocks = static_cast<std::size_t>(std::llround(extent / block_length));
  if (blocks < 1 || std::abs(static_cast<double>(blocks) * block_length - extent) > 1e-6)
    throw Error(Errc::ConfigError,
                fmt::format("grid extent {} is not a multiple of block length {}", extent, block_length));
  const std::size_t n = blocks + 1;
  std::vector<Intersection> nodes;
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col)
      nodes.push_back(Intersection{static_cast<IntersectionId>(row * n + col),
                                   {static_cast<double>(col) * block_length,
                                    static_cast<double>(row) * block_length},
                                   {}});
  std::vector<RoadSegment> segs;
  auto add = [&](std::size_t a, std::size_t b) {
    segs.push_back(RoadSegment{static_cast<SegmentId>(segs.size()), block_length, 1.0, free_flow_speed,
                               static_cast<IntersectionId>(a), static_cast<IntersectionId>(b),
                               lanes_per_direction});
  };
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col + 1 < n; ++col) add(row * n + col, row * n + col + 1);
  for (std::size_t col = 0; col < n; ++col)
    for (std::size_t row = 0; row + 1 < n; ++row) add(row * n + col, (row + 1) * n + col);
  return RoadNetwork(std::move(nodes), std::move(segs));
}

RoadNetwork RoadNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ParseError, fmt::format("cannot open road network '{}'", path.string()));
  return parse(in, path.string());
}

RoadNetwork RoadNetwork::parse(std::istream& in, std::string_view source_name) {
  std::vector<Intersection> nodes;
  std::vector<RoadSegment> segs;
  for (const auto& sec : parse_sections(in, source_name)) {
    if (sec.name == "intersection") {
      nodes.push_back(Intersection{static_cast<IntersectionId>(parse_int(sec.require("id"))),
                                   {parse_double(sec.require("x")), parse_double(sec.require("y"))},
                                   {}});
    } else if (sec.name == "segment") {
      RoadSegment s;
      s.segment_id = static_cast<SegmentId>(parse_int(sec.require("id")));
      s.from = static_cast<IntersectionId>(parse_int(sec.require("from")));
      s.to = static_cast<IntersectionId>(parse_int(sec.require("to")));
      s.length = parse_double(sec.require("length"));
      s.free_flow_speed = parse_double(sec.require("free_flow_speed"));
      if (const auto* w = sec.find("weight")) s.weight = parse_double(*w);
      if (const auto* l = sec.find("lanes")) s.lanes_per_direction = static_cast<int>(parse_int(*l));
      segs.push_back(s);
    } else {
      throw Error(Errc::ParseError,
                  fmt::format("{}:{}: unknown section [{}]", source_name, sec.line, sec.name));
    }
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(nodes.begin(), nodes.end(), by_id);
  std::sort(segs.begin(), segs.end(),
            [](const RoadSegment& a, const RoadSegment& b) { return a.segment_id < b.segment_id; });
  return RoadNetwork(std::move(nodes), std::move(segs));
}

void RoadNetwork::save(std::ostream& out) const {
  for (const auto& n : intersections_)
    out << fmt::format("[intersection]\nid = {}\nx = {}\ny = {}\n\n", n.id, n.position.x, n.position.y);
  for (const auto& s : segments_)
    out << fmt::format(
        "[segment]\nid = {}\nfrom = {}\nto = {}\nlength = {}\nweight = {}\nfree_flow_speed = {}\nlanes = {}\n\n",
        s.segment_id, s.from, s.to, s.length, s.weight, s.free_flow_speed, s.lanes_per_direction);
}

Vec2 RoadNetwork::point_on(SegmentId id, double fraction) const {
  const auto& s = segments_.at(id);
  const Vec2 a = intersections_[s.from].position;
  const Vec2 b = intersections_[s.to].position;
  return a + (b - a) * fraction;
}

Vec2 RoadNetwork::unit(SegmentId id) const {
  const auto& s = segments_.at(id);
  const Vec2 d = intersections_[s.to].position - intersections_[s.from].position;
  return d * (1.0 / d.norm());
}

IntersectionId RoadNetwork::other_end(SegmentId id, IntersectionId end) const {
  const auto& s = segments_.at(id);
  return s.from == end ? s.to : s.from;
}

SegmentProjection RoadNetwork::project(Vec2 point) const {
  SegmentProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  for (const auto& s : segments_) {
    const Vec2 a = intersections_[s.from].position;
    const Vec2 d = intersections_[s.to].position - a;
    const double len2 = d.dot(d);
    const double t = std::clamp((point - a).dot(d) / len2, 0.0, 1.0);
    const double dist = (point - (a + d * t)).norm();
    if (dist < best.distance) best = {s.segment_id, t, dist};
  }
  return best;
}

TrafficIndex compute_tti(const RoadNetwork& network, const std::map<SegmentId, double>& mean_speeds,
                         double computed_at) {
  if (mean_speeds.empty()) throw Error(Errc::NoTraffic, "no segment carries traffic");
  double actual = 0.0;
  double free = 0.0;
  for (const auto& [sid, speed] : mean_speeds) {
    if (sid >= network.segments().size())
      throw Error(Errc::InvalidArgument, fmt::format("unknown segment {}", sid));
    if (!(speed > 0.0))
      throw Error(Errc::InvalidArgument, fmt::format("segment {}: mean speed must be > 0", sid));
    const auto& seg = network.segment(sid);
    actual += seg.length / speed * seg.weight;
    free += seg.length / seg.free_flow_speed * seg.weight;
  }
  return TrafficIndex{actual / free, computed_at};
}

void SegmentSpeedMonitor::record(SegmentId segment, double distance, double dt) {
  auto& t = totals_[segment];
  t.distance += distance;
  t.time += dt;
}

std::map<SegmentId, double> SegmentSpeedMonitor::mean_speeds() const {
  std::map<SegmentId, double> out;
  for (const auto& [sid, t] : totals_)
    if (t.time > 0.0) out[sid] = std::max(min_speed_, t.distance / t.time);
  return out;
}

}  // namespace rcms
