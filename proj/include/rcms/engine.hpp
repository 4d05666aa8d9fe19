#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <variant>
#include <vector>

#include "rcms/event_log.hpp"
#include "rcms/metrics.hpp"
#include "rcms/mobility.hpp"
#include "rcms/radio.hpp"
#include "rcms/routing.hpp"
#include "rcms/scheme.hpp"

namespace rcms {

// ---------------------------------------------------------------- events

/// Pop order among events at the same time, lowest first.
enum class EventType : int { MobilityTick = 0, Delivery = 1, Timer = 2, Packet = 3 };

struct TimerPayload {
  int kind = 0;
  std::uint64_t token = 0;
};

struct SimEvent {
  double time = 0.0;
  EventType type = EventType::MobilityTick;
  VehicleId vehicle = 0;
  std::uint64_t seq = 0;  // insertion order, last tie-breaker
  std::variant<std::monostate, Message, TimerPayload, std::uint64_t> payload;
};

/// Min-queue over (time, type, vehicle, insertion order).
class EventQueue {
 public:
  void push(SimEvent event);
  SimEvent pop();
  const SimEvent& top() const;
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const;
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

// -------------------------------------------------------------- scenario

enum class SrpMode { Fallback, Train, Checkpoint };

struct PacketWorkload {
  std::size_t count = 0;
  double start = 10.0;   // s after warm-up
  double window = 5.0;   // generation times uniform in [start, start + window)
  double ttl = 10.0;     // s a packet may spend in the network
  int hop_retries = 3;   // link-layer retransmissions per hop
};

struct SrpSettings {
  SrpMode mode = SrpMode::Fallback;
  std::filesystem::path checkpoint;
  int hidden = 16;
  int sequence_length = 8;
  int horizon = 4;
  int epochs = 20;
  double learning_rate = 0.05;
  std::size_t history_window = 8;
};

struct Scenario {
  // road network: a grid unless `network_file` is given
  std::filesystem::path network_file;
  double grid_extent = 1000.0;
  double block_length = 250.0;
  double free_flow_speed = 0.0;  // 0: mean desired speed slowed by the expected signal wait
  int lanes_per_direction = 2;
  std::filesystem::path trace_file;  // replays a trace instead of synthetic motion

  std::size_t vehicle_count = 100;
  double sim_duration = 300.0;
  double warm_up = 50.0;
  double tti_window = 60.0;  // s of traffic averaged per traffic-index update (one signal cycle)
  MobilityConfig mobility;
  ProtocolConfig protocol;
  DeliveryModel radio;
  std::string scheme = "rcms";
  RouterKind router = RouterKind::Rcms;
  double min_link_lifetime = 5.0;  // msca_like membership gate, s
  PacketWorkload packets;
  SrpSettings srp;
  std::uint64_t seed = 1;
  bool validate_each_tick = false;

  double max_speed() const { return mobility.max_speed; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Reads `[section]` / `key = value` text; unknown sections or keys are rejected
/// with ConfigError. Relative paths resolve against `base_dir`.
Scenario parse_scenario(std::istream& in, std::string_view source_name = "<scenario>",
                        const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);
void write_scenario(std::ostream& out, const Scenario& scenario);

// ----------------------------------------------------------------- world

struct WorldConfig {
  double tick = 1.0;
  double warm_up = 0.0;
  double tti_window = 60.0;
  std::optional<double> fixed_tti;  // pins the traffic index instead of measuring it
  DeliveryModel radio;
  RouterKind router = RouterKind::Rcms;
  PacketWorkload packets;
  std::size_t trajectory_length = 8;
  std::uint64_t seed = 1;
  bool validate_each_tick = false;
  double max_speed = 30.0;
};

/// One simulated fleet: mobility, radio, scheme, data traffic and the event log.
class World final : public SimContext {
 public:
  World(WorldConfig config, std::unique_ptr<MobilityModel> mobility, std::unique_ptr<Scheme> scheme,
        std::shared_ptr<const RoadNetwork> network = nullptr);

  /// Processes every event up to and including time `t`.
  void run_until(double t);
  /// Queues a data packet generated at `at`.
  void inject_packet(VehicleId source, VehicleId destination, double at);
  /// Called once when the clock first reaches warm-up (before the scheme's tick).
  void on_warm_up(std::function<void(World&)> hook) { warm_up_hook_ = std::move(hook); }
  void set_similarity(SimilarityProvider provider) { similarity_ = std::move(provider); }

  MobilityModel& mobility() { return *mobility_; }
  Scheme& scheme() { return *scheme_; }
  const Scheme& scheme() const { return *scheme_; }
  const Radio& radio() const { return radio_; }
  const std::vector<std::string>& violations() const { return violations_; }
  /// Full per-tick history recorded before warm-up, for model training.
  const std::vector<Trajectory>& warm_up_history() const { return warm_up_history_; }

  // SimContext
  double now() const override { return now_; }
  std::size_t vehicle_count() const override { return states_.size(); }
  const VehicleState& state(VehicleId id) const override { return states_.at(id); }
  const Trajectory& trajectory(VehicleId id) const override { return trajectories_.at(id); }
  std::span<const Vec2> positions() const override { return positions_; }
  Vec2 next_heading(VehicleId id) const override { return mobility_->next_heading(id); }
  double distance_to_intersection(VehicleId id) const override { return mobility_->distance_to_intersection(id); }
  std::uint64_t approach_token(VehicleId id) const override { return mobility_->approach_token(id); }
  IntersectionId upcoming_intersection(VehicleId id) const override { return mobility_->upcoming_intersection(id); }
  TrafficIndex tti() const override { return tti_; }
  double max_speed() const override { return config_.max_speed; }
  void send(Message msg) override;
  void schedule_timer(VehicleId vehicle, double at, int kind, std::uint64_t token) override;
  EventLog& log() override { return log_; }
  const EventLog& log() const { return log_; }
  std::mt19937_64& rng() override { return rng_; }
  const SimilarityProvider& similarity() const override { return similarity_; }

 private:
  struct Packet {
    VehicleId source = 0;
    VehicleId destination = 0;
    double created_at = 0.0;
    int hops = 0;
    RouteProgress progress;
  };

  void refresh_kinematics();
  void update_tti();
  void tick();
  void forward(std::uint64_t id, VehicleId holder);
  void drop(std::uint64_t id, VehicleId holder, std::string_view reason);
  const ClusterView& cluster_view();

  WorldConfig config_;
  std::unique_ptr<MobilityModel> mobility_;
  std::unique_ptr<Scheme> scheme_;
  std::shared_ptr<const RoadNetwork> network_;
  Radio radio_;
  EventQueue queue_;
  EventLog log_;
  std::mt19937_64 rng_;
  SimilarityProvider similarity_;
  double now_ = 0.0;
  long long tick_index_ = 0;
  std::vector<VehicleState> states_;
  std::vector<Trajectory> trajectories_;
  std::vector<Trajectory> warm_up_history_;
  std::vector<Vec2> positions_;
  TrafficIndex tti_;
  double tti_window_start_ = 0.0;
  bool warm_up_done_ = false;
  std::function<void(World&)> warm_up_hook_;
  std::optional<ClusterView> view_;
  std::optional<std::vector<std::vector<VehicleId>>> overlay_;
  std::map<std::uint64_t, Packet> packets_;
  std::map<std::uint64_t, VehicleId> carried_;  // packet -> holder waiting for a next hop
  std::uint64_t next_packet_ = 0;
  std::vector<std::string> violations_;
};

// ------------------------------------------------------------------- runs

struct RunResult {
  EventLog log;
  MetricLedger metrics;
  std::vector<std::string> violations;  // "t=<time>: <message>", only with validation on
  double end_time = 0.0;
};

std::unique_ptr<Scheme> make_scheme(const Scenario& scenario);
/// Builds the mobility source of `scenario` with its own seed stream.
std::unique_ptr<MobilityModel> make_mobility(const Scenario& scenario, std::shared_ptr<const RoadNetwork>& network);

RunResult run(const Scenario& scenario);

/// Writes `events.csv`, `metrics.csv` and the effective `scenario.txt` into `dir`.
void write_run(const std::filesystem::path& dir, const Scenario& scenario, const RunResult& result);

// ----------------------------------------------------------------- sweeps

enum class SweepAxis { MaxSpeed, TtiTarget, PacketCount };

std::optional<SweepAxis> sweep_axis_from(std::string_view text);
std::string_view to_string(SweepAxis axis);

inline constexpr double kTtiBins[] = {1.25, 1.5, 1.75, 2.0, 2.25};

/// Mean traffic index of a mobility-only run of `scenario` after warm-up.
double measure_tti(const Scenario& scenario);

/// Scales vehicle_count (and, past the density limit, the green time) until the
/// measured traffic index lies within ±0.125 of `target`, or returns the
/// closest setting found. `achieved` receives its measured value.
Scenario calibrate_tti(const Scenario& base, double target, double* achieved = nullptr);

struct SweepRow {
  std::string scheme;
  double value = 0.0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  MetricLedger metrics;
  std::optional<double> achieved_tti;  // tti_target sweeps
};

struct SweepSpec {
  SweepAxis axis = SweepAxis::MaxSpeed;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> schemes;
  unsigned jobs = 1;  // worker threads; rows keep their (value, seed, scheme) order
};

/// Applies a sweep value to a copy of `base`.
Scenario apply_axis(const Scenario& base, SweepAxis axis, double value);

/// One run per (value, seed, scheme); failing runs are recorded, not thrown.
/// `progress` sees each row as it completes.
std::vector<SweepRow> sweep(const Scenario& base, const SweepSpec& spec,
                            const std::function<void(const SweepRow&)>& progress = {});

/// Maps a sweep scheme name onto clustering scheme and router: "rcms" runs both
/// RCMS parts; "vmasc_like"/"msca_like" cluster with that baseline and route with
/// the scenario's router (cbdrp_like if it names rcms); "cbdrp_like"/"gpsr_like"
/// route with that router over vmasc_like clusters.
Scenario with_scheme(const Scenario& base, std::string_view scheme);

/// Headline values of one run by metric name (absent metrics omitted).
std::map<std::string, double> headline_metrics(const MetricLedger& metrics);

/// `axis,value,scheme,seed,status,metric,value_out` rows, one per run and metric.
void write_sweep_rows(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);
/// `axis,value,scheme,metric,mean,ci_low,ci_high,runs,failures`.
void write_summary(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);

struct SummaryRow {
  std::string axis;
  double value = 0.0;
  std::string scheme;
  std::string metric;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
};

std::vector<SummaryRow> parse_summary(std::istream& in);

/// One SVG line chart per metric in `rows`, x = sweep value, one line per scheme
/// with its bootstrap band. Returns the files written.
std::vector<std::filesystem::path> plot_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& dir);

}  // namespace rcms
