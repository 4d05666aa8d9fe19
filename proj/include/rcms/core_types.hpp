#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rcms {

enum class Errc {
  ParseError,
  OffMapError,
  NoTraffic,
  UnknownVehicle,
  NoRoute,
  TtlExpired,
  ShapeMismatch,
  EmptySequence,
  NonFiniteLoss,
  InsufficientHistory,
  EmptyRegion,
  TooFewCores,
  NoVehicles,
  MalformedLog,
  ConfigError,
  InvariantViolation,
  NonMonotonicTime,
  InvalidArgument,
};

std::string_view to_string(Errc code);

/// Library-wide exception; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

using VehicleId = std::uint32_t;
using RegionId = std::uint32_t;
using SegmentId = std::uint32_t;
using IntersectionId = std::uint32_t;

inline constexpr SegmentId kNoSegment = static_cast<SegmentId>(-1);
inline constexpr IntersectionId kNoIntersection = static_cast<IntersectionId>(-1);

enum class VehicleRole { Ordinary, Core, Gateway, Unattached };

std::string_view to_string(VehicleRole role);

/// Snapshot of one vehicle: kinematics, role, and the traffic index it last heard.
struct VehicleState {
  VehicleId vehicle_id = 0;
  VehicleRole role = VehicleRole::Unattached;
  SegmentId segment_id = kNoSegment;
  Vec2 speed;
  Vec2 acceleration;
  int heading_sign = +1;  // relative to the current core; +1 when unattached
  Vec2 position;
  Vec2 direction{1.0, 0.0};  // unit travel direction, kept while stationary
  double timestamp = 0.0;
  double segment_fraction = 0.0;  // position along the segment in [0,1]
  double tti = 1.0;               // last traffic index broadcast heard

  /// Unit heading from the speed vector, or `direction` when stationary.
  Vec2 heading() const;
};

double relative_speed(const VehicleState& a, const VehicleState& b);
double relative_distance(const VehicleState& a, const VehicleState& b);

/// +1 when `self` moves in the same direction as `reference` (positive dot product), else -1.
int heading_sign_relative_to(const VehicleState& self, const VehicleState& reference);

/// Bounded, strictly time-ordered history of one vehicle.
class Trajectory {
 public:
  explicit Trajectory(VehicleId vehicle_id = 0, std::size_t max_length = 8);

  /// Appends `state`; throws NonMonotonicTime unless its timestamp is strictly
  /// greater than the newest sample. Evicts the oldest sample once full.
  void append(const VehicleState& state);

  VehicleId vehicle_id() const { return vehicle_id_; }
  std::size_t max_length() const { return max_length_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const VehicleState& operator[](std::size_t i) const { return samples_[i]; }
  const VehicleState& back() const { return samples_.back(); }
  const VehicleState& front() const { return samples_.front(); }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }
  void clear() { samples_.clear(); }

 private:
  VehicleId vehicle_id_;
  std::size_t max_length_;
  std::deque<VehicleState> samples_;
};

struct Region {
  RegionId region_id = 0;
  VehicleId core_id = 0;
  std::set<VehicleId> member_ids;
  std::set<VehicleId> gateway_ids;
  double created_at = 0.0;
  std::optional<double> dissolved_at;
};

/// Core selection rule used on replacement: `Centered` prefers the candidate
/// closest to the surviving members, `Verbatim` maximises λ·mean distance.
enum class ReplacementMode { Centered, Verbatim };

/// Protocol knobs. Defaults follow the reference experiment settings.
struct ProtocolConfig {
  double zeta = 2.0;                     // interaction wait interval, s
  double updating_interval = 1.0;        // s
  double tti_congestion_threshold = 1.5;
  double comm_range = 250.0;             // m
  double overlap_agg_fraction = 0.5;
  double replacement_loss_fraction = 0.5;
  double decomposition_threshold = 0.5;
  double speed_change_fraction = 0.5;

  int max_read_retries = 3;            // silent READ rounds before self-promotion
  double approach_radius = 50.0;       // m, intersection zone for the decomposition check
  double turn_match_cosine = 0.5;      // next headings closer than this count as the same turn
  int replacement_min_roster = 2;      // smaller rosters never trigger core replacement
  ReplacementMode replacement_mode = ReplacementMode::Centered;
  // Unit factors applied inside the exponentials of the threshold formulas.
  double distance_scale = 1.0 / 250.0;  // 1/m
  double speed_scale = 1.0 / 30.0;      // s/m

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

}  // namespace rcms
