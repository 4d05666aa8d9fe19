#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <vector>

#include "rcms/core_types.hpp"

namespace rcms {

struct Intersection {
  IntersectionId id = 0;
  Vec2 position;
  std::vector<SegmentId> segments;
};

/// Two-way straight road between two intersections.
struct RoadSegment {
  SegmentId segment_id = 0;
  double length = 0.0;  // m
  double weight = 1.0;
  double free_flow_speed = 0.0;  // m/s
  IntersectionId from = 0;
  IntersectionId to = 0;
  int lanes_per_direction = 2;
};

/// Result of projecting a point onto the nearest segment.
struct SegmentProjection {
  SegmentId segment_id = kNoSegment;
  double fraction = 0.0;  // 0 at `from`, 1 at `to`
  double distance = 0.0;  // perpendicular distance, m
};

/// Immutable road graph. Ids are dense indices into the vectors.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  /// Validates ids, positive lengths/speeds/weights and connectivity; throws ConfigError.
  RoadNetwork(std::vector<Intersection> intersections, std::vector<RoadSegment> segments);

  /// Square grid of `extent` meters with intersections every `block_length` meters.
  static RoadNetwork grid(double extent, double block_length, double free_flow_speed,
                          int lanes_per_direction = 2);

  static RoadNetwork load(const std::filesystem::path& path);
  static RoadNetwork parse(std::istream& in, std::string_view source_name = "<network>");
  void save(std::ostream& out) const;

  const std::vector<Intersection>& intersections() const { return intersections_; }
  const std::vector<RoadSegment>& segments() const { return segments_; }
  const RoadSegment& segment(SegmentId id) const { return segments_.at(id); }
  const Intersection& intersection(IntersectionId id) const { return intersections_.at(id); }

  /// Point at `fraction` along the segment from its `from` end.
  Vec2 point_on(SegmentId id, double fraction) const;
  /// Unit vector from `from` towards `to`.
  Vec2 unit(SegmentId id) const;
  /// The endpoint of `id` that is not `end`.
  IntersectionId other_end(SegmentId id, IntersectionId end) const;

  SegmentProjection project(Vec2 point) const;

  Vec2 extent_min() const { return extent_min_; }
  Vec2 extent_max() const { return extent_max_; }

 private:
  std::vector<Intersection> intersections_;
  std::vector<RoadSegment> segments_;
  Vec2 extent_min_;
  Vec2 extent_max_;
};

struct TrafficIndex {
  double value = 1.0;
  double computed_at = 0.0;
};

/// Weighted travel-time ratio over the segments present in `mean_speeds`
/// (segment id -> mean observed speed, m/s). Segments without traffic must be
/// omitted. Throws NoTraffic if the map is empty and InvalidArgument for a
/// non-positive speed or unknown segment.
TrafficIndex compute_tti(const RoadNetwork& network, const std::map<SegmentId, double>& mean_speeds,
                         double computed_at = 0.0);

/// Accumulates distance travelled and vehicle-seconds spent per segment so the
/// space-mean speed (total distance / total time) can feed `compute_tti`.
class SegmentSpeedMonitor {
 public:
  explicit SegmentSpeedMonitor(double min_speed = 0.1) : min_speed_(min_speed) {}

  void record(SegmentId segment, double distance, double dt);
  /// Space-mean speed per observed segment, floored at `min_speed`.
  std::map<SegmentId, double> mean_speeds() const;
  void reset() { totals_.clear(); }
  bool empty() const { return totals_.empty(); }

 private:
  struct Totals {
    double distance = 0.0;
    double time = 0.0;
  };
  double min_speed_;
  std::map<SegmentId, Totals> totals_;
};

}  // namespace rcms
