#pragma once

#include <limits>
#include <map>
#include <memory>
#include <random>
#include <vector>

#include "rcms/core_types.hpp"
#include "rcms/road.hpp"

namespace rcms {

struct MobilityConfig {
  double max_speed = 30.0;          // m/s, hard cap
  double min_desired_speed = 10.0;  // desired speeds are drawn from [min, max]
  double acceleration = 2.6;        // m/s^2
  double comfortable_decel = 4.5;   // m/s^2, used by the safe-gap rule
  double max_decel = 7.5;           // m/s^2, decides whether a red light can still be honoured
  double reaction_time = 1.0;       // s
  double vehicle_length = 5.0;      // m
  double min_gap = 2.5;             // m, bumper to bumper
  bool signals = true;
  double signal_cycle = 60.0;       // s
  double green_fraction = 0.5;      // share of the cycle given to east-west approaches
  double p_straight = 0.6;
  double p_left = 0.2;
  double p_right = 0.2;

  void validate() const;
};

/// Interface over synthetic and replayed motion.
class MobilityModel {
 public:
  virtual ~MobilityModel() = default;

  virtual void step(double dt) = 0;
  virtual double time() const = 0;
  virtual std::size_t vehicle_count() const = 0;
  /// Kinematic fields only; protocol fields keep their defaults.
  virtual VehicleState state(VehicleId id) const = 0;
  /// Unit direction the vehicle will take after its upcoming intersection.
  virtual Vec2 next_heading(VehicleId id) const = 0;
  /// Distance left to the upcoming intersection, m.
  virtual double distance_to_intersection(VehicleId id) const = 0;
  /// Identifies the upcoming intersection approach; changes when the vehicle enters a new segment.
  virtual std::uint64_t approach_token(VehicleId id) const = 0;
  /// Intersection the vehicle is driving towards, or kNoIntersection off-network.
  virtual IntersectionId upcoming_intersection(VehicleId id) const = 0;
  /// Per-segment travel accumulated since the last call to `reset_speed_monitor`.
  virtual const SegmentSpeedMonitor& speed_monitor() const = 0;
  virtual void reset_speed_monitor() = 0;
};

/// Per-vehicle lane state of the synthetic model.
struct LaneMotion {
  VehicleId id = 0;
  SegmentId segment = 0;
  bool forward = true;  // travelling from `from` towards `to`
  int lane = 0;
  double offset = 0.0;  // distance travelled along the segment in travel direction, m
  double speed = 0.0;
  double desired_speed = 0.0;
  double acceleration = 0.0;
  SegmentId next_segment = kNoSegment;
  bool next_forward = true;
  std::uint64_t entries = 0;  // segments entered so far
};

/// Desired-speed relaxation with safe-gap braking on a signalised grid.
/// No two vehicles in the same lane come closer than `vehicle_length + min_gap`.
class CarFollowingMobility final : public MobilityModel {
 public:
  /// Random placement of `count` vehicles, spaced per lane.
  CarFollowingMobility(std::shared_ptr<const RoadNetwork> network, MobilityConfig config,
                       std::size_t count, std::uint64_t seed);
  /// Explicit placement; `next_segment` entries equal to kNoSegment are drawn.
  CarFollowingMobility(std::shared_ptr<const RoadNetwork> network, MobilityConfig config,
                       std::vector<LaneMotion> vehicles, std::uint64_t seed);

  void step(double dt) override;
  double time() const override { return time_; }
  std::size_t vehicle_count() const override { return vehicles_.size(); }
  VehicleState state(VehicleId id) const override;
  Vec2 next_heading(VehicleId id) const override;
  double distance_to_intersection(VehicleId id) const override;
  std::uint64_t approach_token(VehicleId id) const override;
  IntersectionId upcoming_intersection(VehicleId id) const override;
  const SegmentSpeedMonitor& speed_monitor() const override { return monitor_; }
  void reset_speed_monitor() override { monitor_.reset(); }

  const LaneMotion& motion(VehicleId id) const { return vehicles_.at(id); }
  /// True when the approach of `segment` travelling `forward` currently shows green.
  bool green_for(SegmentId segment, bool forward) const;

 private:
  IntersectionId downstream(const LaneMotion& m) const;
  Vec2 travel_unit(SegmentId segment, bool forward) const;
  void choose_next(LaneMotion& m);

  std::shared_ptr<const RoadNetwork> network_;
  MobilityConfig config_;
  std::vector<LaneMotion> vehicles_;
  std::mt19937_64 rng_;
  SegmentSpeedMonitor monitor_;
  double time_ = 0.0;
};

/// One timestamped sample as it appears in a trace file.
struct TracePoint {
  double time = 0.0;
  Vec2 position;
  double speed = 0.0;
};

/// Replays recorded trajectories by linear interpolation; vehicles hold their
/// first/last position outside their recorded span.
class TraceMobility final : public MobilityModel {
 public:
  TraceMobility(std::shared_ptr<const RoadNetwork> network, std::map<VehicleId, Trajectory> trajectories);

  void step(double dt) override;
  double time() const override { return time_; }
  std::size_t vehicle_count() const override { return tracks_.size(); }
  VehicleState state(VehicleId id) const override;
  Vec2 next_heading(VehicleId id) const override;
  double distance_to_intersection(VehicleId id) const override;
  std::uint64_t approach_token(VehicleId id) const override;
  IntersectionId upcoming_intersection(VehicleId id) const override;
  const SegmentSpeedMonitor& speed_monitor() const override { return monitor_; }
  void reset_speed_monitor() override { monitor_.reset(); }

  /// Original trace id of dense vehicle `id`.
  VehicleId source_id(VehicleId id) const { return source_ids_.at(id); }

 private:
  VehicleState interpolate(std::size_t index, double t) const;

  std::shared_ptr<const RoadNetwork> network_;
  std::vector<std::vector<VehicleState>> tracks_;
  std::vector<VehicleId> source_ids_;
  std::vector<VehicleState> current_;
  SegmentSpeedMonitor monitor_;
  double time_ = 0.0;
};

/// Constant-velocity motion in the open plane, with no road network. Velocities
/// and positions can be rewritten between steps to script encounters.
class KinematicMobility final : public MobilityModel {
 public:
  struct Vehicle {
    Vec2 position;
    Vec2 velocity;
  };

  explicit KinematicMobility(std::vector<Vehicle> vehicles);

  void step(double dt) override;
  double time() const override { return time_; }
  std::size_t vehicle_count() const override { return vehicles_.size(); }
  VehicleState state(VehicleId id) const override;
  Vec2 next_heading(VehicleId id) const override;
  double distance_to_intersection(VehicleId id) const override;
  std::uint64_t approach_token(VehicleId id) const override;
  IntersectionId upcoming_intersection(VehicleId id) const override;
  const SegmentSpeedMonitor& speed_monitor() const override { return monitor_; }
  void reset_speed_monitor() override {}

  void set_position(VehicleId id, Vec2 position) { vehicles_.at(id).position = position; }
  void set_velocity(VehicleId id, Vec2 velocity);
  /// Places an intersection `distance` metres ahead of the vehicle, after which it turns to `next_heading`.
  void set_approach(VehicleId id, double distance, Vec2 next_heading, IntersectionId intersection);

 private:
  struct Extra {
    Vec2 direction{1.0, 0.0};
    Vec2 acceleration;
    double approach = std::numeric_limits<double>::infinity();
    Vec2 next_heading;
    bool has_next = false;
    IntersectionId intersection = kNoIntersection;
    std::uint64_t token = 0;
  };
  std::vector<Vehicle> vehicles_;
  std::vector<Extra> extra_;
  SegmentSpeedMonitor monitor_;
  double time_ = 0.0;
};

}  // namespace rcms
