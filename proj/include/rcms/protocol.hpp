#pragma once

#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "rcms/scheme.hpp"
#include "rcms/thresholds.hpp"

namespace rcms {

/// What a vehicle last heard from a core's beacon or ROGER.
struct HeardCore {
  VehicleState state;
  RegionId region = kNoRegion;
  double heard_at = 0.0;
  Vec2 next_heading;
  IntersectionId upcoming = kNoIntersection;
  std::size_t roster_size = 0;
};

struct RogerInfo {
  VehicleId core_id = 0;
  RegionId region = kNoRegion;
  VehicleState state;
  std::vector<VehicleState> history;
};

/// A core's knowledge of one member, fed by state updates.
struct RosterEntry {
  VehicleState last;
  double updated_at = 0.0;
  Trajectory history;
};

struct VehicleProtocolState {
  VehicleRole role = VehicleRole::Unattached;
  std::optional<RegionId> region_id;
  VehicleId core_id = kBroadcast;
  std::optional<double> waiting_timer;  // READ outstanding until this time
  std::vector<RogerInfo> pending_rogers;
  double last_update_sent = -std::numeric_limits<double>::infinity();
  double speed_at_last_update = 0.0;
  std::set<VehicleId> known_cores_in_range;
  std::deque<bool> overlap_window;  // this vehicle's last two ζ-period overlap observations

  std::map<VehicleId, HeardCore> heard;
  int silent_rounds = 0;
  std::optional<VehicleId> awaiting_agreement;
  bool join_as_gateway = false;
  std::optional<double> promotion_backoff_since;
  double core_heard_at = 0.0;
  std::uint64_t handled_approach = std::numeric_limits<std::uint64_t>::max();
  bool ever_attached = false;
  bool candidate_core = false;  // former core after a merge; informational only
  std::uint64_t timer_token = 0;

  // Core only.
  std::map<VehicleId, RosterEntry> roster;
  std::set<VehicleId> roster_at_check;
  std::optional<double> alone_since;
};

/// Per-region-pair bookkeeping for the aggregation debounce.
struct MergeRecord {
  double time = 0.0;
  RegionId first = 0;
  RegionId second = 0;
  RegionId merged = 0;
  int consecutive_periods = 0;
  VehicleId new_core = 0;
};

/// Region construction, core replacement, aggregation and decomposition.
class RcmsProtocol final : public Scheme {
 public:
  enum Timer : int { kStart = 1, kReadTimeout, kAgreementTimeout, kPromoteBackoff };

  /// The protocol starts at `start_time`, each vehicle after a random jitter in [0, ζ).
  RcmsProtocol(ProtocolConfig config, double start_time);

  std::string_view name() const override { return "rcms"; }
  void start(SimContext& ctx) override;
  void on_tick(SimContext& ctx) override;
  void on_message(SimContext& ctx, VehicleId receiver, const Message& msg) override;
  void on_timer(SimContext& ctx, VehicleId vehicle, int kind, std::uint64_t token) override;
  ClusterView view() const override;
  std::vector<std::string> validate(const SimContext& ctx) const override;

  const ProtocolConfig& config() const { return config_; }
  const VehicleProtocolState& vehicle(VehicleId id) const { return vehicles_.at(id); }
  const std::map<RegionId, Region>& regions() const { return regions_; }
  const std::vector<MergeRecord>& merges() const { return merges_; }

  /// Makes `vehicle` the core of a fresh region immediately (scripted set-ups).
  RegionId promote(SimContext& ctx, VehicleId vehicle, std::string_view reason = "self");
  /// Runs the periodic replacement and aggregation checks now.
  void run_period_checks(SimContext& ctx);

 private:
  bool active(const SimContext& ctx) const { return ctx.now() >= start_time_; }
  double stale_after() const { return 2.5 * config_.updating_interval; }
  bool heading_acceptable(const SimContext& ctx, const VehicleState& self, const VehicleState& core) const;
  std::vector<VehicleId> fresh_cores_in_range(const SimContext& ctx, VehicleId v) const;
  double lambda(const SimContext& ctx, const std::vector<VehicleState>& core_history, VehicleId ordinary) const;

  void begin_construction(SimContext& ctx, VehicleId v);
  void send_read(SimContext& ctx, VehicleId v);
  void on_read_timeout(SimContext& ctx, VehicleId v);
  void join(SimContext& ctx, VehicleId v, VehicleId core, RegionId region);
  void detach(SimContext& ctx, VehicleId v, std::string_view reason, bool notify_core);
  void dissolve(SimContext& ctx, RegionId region, std::string_view reason);
  void remove_from_region(VehicleId v);

  void core_tick(SimContext& ctx, VehicleId v);
  void member_tick(SimContext& ctx, VehicleId v);
  void replacement_check(SimContext& ctx, VehicleId core);
  void aggregation_check(SimContext& ctx);

  ProtocolConfig config_;
  ThresholdScaling scaling_;
  double start_time_;
  std::vector<VehicleProtocolState> vehicles_;
  std::map<RegionId, Region> regions_;
  RegionId next_region_ = 0;
  double next_period_check_ = 0.0;
  std::map<std::pair<RegionId, RegionId>, int> overlap_streak_;
  std::vector<MergeRecord> merges_;
};

}  // namespace rcms
