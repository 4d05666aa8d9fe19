#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "rcms/baselines.hpp"
#include "rcms/engine.hpp"
#include "rcms/keyvalue.hpp"
#include "rcms/protocol.hpp"
#include "rcms/trace.hpp"

namespace rcms {

namespace {

/// Independent seed streams per purpose (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kMobility = 1, kProtocol = 2, kPackets = 3, kRadio = 4, kSrp = 5 };

/// Mean signal wait of a vehicle arriving at a random phase, plus the
/// stop-and-go loss when it has to stop.
double expected_signal_delay(const MobilityConfig& m, const RoadNetwork& net, const RoadSegment& seg,
                             IntersectionId node, double speed) {
  if (!m.signals || net.intersection(node).segments.size() < 3) return 0.0;
  const Vec2 u = net.unit(seg.segment_id);
  const double red = std::abs(u.x) >= std::abs(u.y) ? 1.0 - m.green_fraction : m.green_fraction;
  const double stop_loss = speed / (2.0 * m.acceleration) + speed / (2.0 * m.comfortable_decel);
  return red * (red * m.signal_cycle / 2.0 + stop_loss);
}

std::shared_ptr<const RoadNetwork> make_network(const Scenario& s) {
  if (!s.network_file.empty()) return std::make_shared<RoadNetwork>(RoadNetwork::load(s.network_file));
  if (s.free_flow_speed > 0.0)
    return std::make_shared<RoadNetwork>(
        RoadNetwork::grid(s.grid_extent, s.block_length, s.free_flow_speed, s.lanes_per_direction));
  // Uncongested travel includes the expected signal wait, so an empty grid sits near 1.
  const double desired = 0.5 * (s.mobility.min_desired_speed + s.mobility.max_speed);
  const auto grid = RoadNetwork::grid(s.grid_extent, s.block_length, desired, s.lanes_per_direction);
  auto segments = grid.segments();
  for (auto& seg : segments) {
    const double delay = 0.5 * (expected_signal_delay(s.mobility, grid, seg, seg.to, desired) +
                                expected_signal_delay(s.mobility, grid, seg, seg.from, desired));
    seg.free_flow_speed = seg.length / (seg.length / desired + delay);
  }
  return std::make_shared<RoadNetwork>(grid.intersections(), std::move(segments));
}

WorldConfig world_config(const Scenario& s) {
  WorldConfig c;
  c.tick = s.protocol.updating_interval;
  c.warm_up = s.warm_up;
  c.tti_window = s.tti_window;
  c.radio = s.radio;
  c.radio.rng_seed = derive_seed(s.seed ^ s.radio.rng_seed, kRadio);
  c.router = s.router;
  c.packets = s.packets;
  c.trajectory_length = std::max<std::size_t>(static_cast<std::size_t>(s.srp.sequence_length), s.srp.history_window);
  c.seed = derive_seed(s.seed, kProtocol);
  c.validate_each_tick = s.validate_each_tick;
  c.max_speed = s.mobility.max_speed;
  return c;
}

}  // namespace

std::unique_ptr<Scheme> make_scheme(const Scenario& scenario) {
  if (scenario.scheme == "rcms") {
    ProtocolConfig config = scenario.protocol;
    config.comm_range = scenario.radio.comm_range;
    return std::make_unique<RcmsProtocol>(config, scenario.warm_up);
  }
  if (scenario.scheme == "vmasc_like")
    return std::make_unique<BaselineScheme>(BaselineKind::VmascLike, scenario.radio.comm_range, scenario.warm_up);
  if (scenario.scheme == "msca_like")
    return std::make_unique<BaselineScheme>(BaselineKind::MscaLike, scenario.radio.comm_range, scenario.warm_up,
                                            scenario.min_link_lifetime);
  throw Error(Errc::ConfigError, fmt::format("scenario.scheme: unknown scheme '{}'", scenario.scheme));
}

std::unique_ptr<MobilityModel> make_mobility(const Scenario& scenario, std::shared_ptr<const RoadNetwork>& network) {
  network = make_network(scenario);
  if (!scenario.trace_file.empty()) {
    auto trajectories = load_trace(scenario.trace_file, *network);
    return std::make_unique<TraceMobility>(network, std::move(trajectories));
  }
  return std::make_unique<CarFollowingMobility>(network, scenario.mobility, scenario.vehicle_count,
                                                derive_seed(scenario.seed, kMobility));
}

RunResult run(const Scenario& scenario) {
  scenario.validate();
  std::shared_ptr<const RoadNetwork> network;
  auto mobility = make_mobility(scenario, network);
  World world(world_config(scenario), std::move(mobility), make_scheme(scenario), network);

  SimilarityProvider similarity;
  similarity.normalizer = srp::Normalizer::for_scenario(scenario.mobility.max_speed);
  similarity.options.history_window = scenario.srp.history_window;
  auto model = std::make_shared<srp::SrpModel>();
  if (scenario.srp.mode == SrpMode::Checkpoint) {
    std::ifstream in(scenario.srp.checkpoint);
    if (!in) throw Error(Errc::ConfigError, fmt::format("srp.checkpoint: cannot open '{}'", scenario.srp.checkpoint.string()));
    *model = srp::read_checkpoint(in, scenario.srp.checkpoint.string());
    similarity.model = model.get();
  }
  world.set_similarity(similarity);
  if (scenario.srp.mode == SrpMode::Train) {
    world.on_warm_up([&scenario, model, similarity](World& w) mutable {
      srp::SrpConfig config;
      config.hidden = scenario.srp.hidden;
      config.sequence_length = scenario.srp.sequence_length;
      config.horizon = scenario.srp.horizon;
      const auto pairs = srp::make_training_pairs(w.warm_up_history(), similarity.normalizer,
                                                  config.sequence_length, config.horizon, config.horizon);
      auto initial = srp::SrpModel::random(config, derive_seed(scenario.seed, kSrp), similarity.normalizer);
      *model = pairs.empty() ? initial
                             : srp::train(std::move(initial), pairs, scenario.srp.epochs, scenario.srp.learning_rate).model;
      similarity.model = model.get();
      w.set_similarity(similarity);
    });
  }

  if (scenario.packets.count > 0 && world.vehicle_count() >= 2) {
    std::mt19937_64 rng(derive_seed(scenario.seed, kPackets));
    std::uniform_real_distribution<double> when(0.0, 1.0);
    std::uniform_int_distribution<VehicleId> pick(0, static_cast<VehicleId>(world.vehicle_count() - 1));
    for (std::size_t k = 0; k < scenario.packets.count; ++k) {
      const double at = scenario.warm_up + scenario.packets.start + when(rng) * scenario.packets.window;
      const VehicleId source = pick(rng);
      VehicleId destination = pick(rng);
      while (destination == source) destination = pick(rng);
      world.inject_packet(source, destination, at);
    }
  }

  world.run_until(scenario.sim_duration);
  RunResult result;
  result.log = world.log();
  result.end_time = scenario.sim_duration;
  result.metrics = compute_metrics(result.log, scenario.warm_up, scenario.sim_duration);
  result.violations = world.violations();
  return result;
}

void write_run(const std::filesystem::path& dir, const Scenario& scenario, const RunResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "events.csv");
    result.log.write(out);
  }
  {
    std::ofstream out(dir / "metrics.csv");
    const std::string label = scenario.scheme == "rcms" && scenario.router == RouterKind::Rcms
                                  ? scenario.scheme
                                  : fmt::format("{}+{}", scenario.scheme, to_string(scenario.router));
    write_metric_csv(out, result.metrics, label, scenario.seed, scenario.protocol.updating_interval, result.end_time);
  }
  {
    std::ofstream out(dir / "scenario.txt");
    write_scenario(out, scenario);
  }
}

// ------------------------------------------------------------------ sweeps

std::optional<SweepAxis> sweep_axis_from(std::string_view text) {
  if (text == "max_speed") return SweepAxis::MaxSpeed;
  if (text == "tti_target") return SweepAxis::TtiTarget;
  if (text == "packet_count") return SweepAxis::PacketCount;
  return std::nullopt;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::MaxSpeed: return "max_speed";
    case SweepAxis::TtiTarget: return "tti_target";
    case SweepAxis::PacketCount: return "packet_count";
  }
  return "?";
}

double measure_tti(const Scenario& scenario) {
  std::shared_ptr<const RoadNetwork> network;
  auto mobility = make_mobility(scenario, network);
  const double dt = scenario.protocol.updating_interval;
  double window_start = 0.0;
  double sum = 0.0;
  std::size_t samples = 0;
  for (long long k = 1; static_cast<double>(k) * dt <= scenario.sim_duration + 1e-9; ++k) {
    mobility->step(dt);
    const double now = static_cast<double>(k) * dt;
    if (now - window_start < scenario.tti_window - 1e-9) continue;
    const auto speeds = mobility->speed_monitor().mean_speeds();
    mobility->reset_speed_monitor();
    window_start = now;
    if (speeds.empty() || now < scenario.warm_up) continue;
    sum += compute_tti(*network, speeds, now).value;
    ++samples;
  }
  return samples == 0 ? 1.0 : sum / static_cast<double>(samples);
}

Scenario calibrate_tti(const Scenario& base, double target, double* achieved) {
  constexpr double kTolerance = 0.125;
  Scenario best = base;
  double best_tti = measure_tti(base);
  auto consider = [&](const Scenario& s) {
    const double t = measure_tti(s);
    if (std::abs(t - target) < std::abs(best_tti - target)) {
      best = s;
      best_tti = t;
    }
    return t;
  };

  // Density first: the traffic index grows with the number of vehicles.
  const double lane_length = 2.0 * base.lanes_per_direction * 2.0 * base.grid_extent *
                             (std::floor(base.grid_extent / base.block_length) + 1.0);
  const auto capacity = static_cast<std::size_t>(0.6 * lane_length / (base.mobility.vehicle_length + base.mobility.min_gap));
  std::size_t low = 1;
  std::size_t high = std::max<std::size_t>(capacity, base.vehicle_count);
  if (std::abs(best_tti - target) > kTolerance) {
    for (int iteration = 0; iteration < 10 && low + 1 < high; ++iteration) {
      Scenario s = base;
      s.vehicle_count = (low + high) / 2;
      const double t = consider(s);
      if (std::abs(t - target) <= kTolerance) break;
      (t < target ? low : high) = s.vehicle_count;
    }
  }
  // Longer signal cycles add waiting time when density alone falls short.
  for (double stretch : {2.0, 3.0, 4.0}) {
    if (std::abs(best_tti - target) <= kTolerance || !base.mobility.signals || best_tti > target) break;
    Scenario s = best;
    s.mobility.signal_cycle = base.mobility.signal_cycle * stretch;
    consider(s);
  }
  if (achieved) *achieved = best_tti;
  return best;
}

Scenario apply_axis(const Scenario& base, SweepAxis axis, double value) {
  Scenario s = base;
  switch (axis) {
    case SweepAxis::MaxSpeed:
      if (!(value > 0.0)) throw Error(Errc::ConfigError, "max_speed sweep values must be positive");
      s.mobility.max_speed = value;
      s.mobility.min_desired_speed = std::min(s.mobility.min_desired_speed, value);
      break;
    case SweepAxis::PacketCount:
      if (value < 0.0 || value != std::floor(value))
        throw Error(Errc::ConfigError, "packet_count sweep values must be non-negative integers");
      s.packets.count = static_cast<std::size_t>(value);
      break;
    case SweepAxis::TtiTarget:
      s = calibrate_tti(base, value);
      break;
  }
  return s;
}

Scenario with_scheme(const Scenario& base, std::string_view scheme) {
  Scenario s = base;
  if (scheme == "rcms") {
    s.scheme = "rcms";
    s.router = RouterKind::Rcms;
  } else if (scheme == "vmasc_like" || scheme == "msca_like") {
    s.scheme = std::string(scheme);
    if (s.router == RouterKind::Rcms) s.router = RouterKind::CbdrpLike;
  } else if (auto router = router_from(scheme); router && *router != RouterKind::Rcms) {
    s.scheme = "vmasc_like";
    s.router = *router;
  } else {
    throw Error(Errc::ConfigError, fmt::format("unknown scheme '{}'", scheme));
  }
  return s;
}

std::vector<SweepRow> sweep(const Scenario& base, const SweepSpec& spec,
                            const std::function<void(const SweepRow&)>& progress) {
  if (spec.values.empty()) throw Error(Errc::ConfigError, "sweep needs at least one value");
  if (spec.seeds.empty()) throw Error(Errc::ConfigError, "sweep needs at least one seed");
  if (spec.schemes.empty()) throw Error(Errc::ConfigError, "sweep needs at least one scheme");
  for (const auto& name : spec.schemes) with_scheme(base, name);

  struct Job {
    double value;
    std::uint64_t seed;
    std::string scheme;
  };
  std::vector<Job> jobs;
  for (double value : spec.values)
    for (std::uint64_t seed : spec.seeds)
      for (const auto& scheme : spec.schemes) jobs.push_back({value, seed, scheme});

  // Calibration depends on the value only, so it runs once per value up front.
  std::map<double, std::pair<Scenario, std::optional<double>>> prepared;
  std::map<double, std::string> preparation_errors;
  for (double value : spec.values) {
    try {
      if (spec.axis == SweepAxis::TtiTarget) {
        double achieved = 0.0;
        prepared.emplace(value, std::pair{calibrate_tti(base, value, &achieved), achieved});
      } else {
        prepared.emplace(value, std::pair{apply_axis(base, spec.axis, value), std::nullopt});
      }
    } catch (const std::exception& e) {
      preparation_errors[value] = e.what();
    }
  }

  std::vector<SweepRow> rows(jobs.size());
  std::mutex report;
  auto execute = [&](std::size_t index) {
    const Job& job = jobs[index];
    SweepRow row;
    row.scheme = job.scheme;
    row.value = job.value;
    row.seed = job.seed;
    try {
      if (auto err = preparation_errors.find(job.value); err != preparation_errors.end())
        throw Error(Errc::ConfigError, err->second);
      const auto& [scenario, achieved] = prepared.at(job.value);
      Scenario s = with_scheme(scenario, job.scheme);
      s.seed = job.seed;
      RunResult result = run(s);
      row.metrics = std::move(result.metrics);
      row.achieved_tti = achieved;
      if (!result.violations.empty()) {
        row.ok = false;
        row.error = result.violations.front();
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    std::lock_guard lock(report);
    rows[index] = std::move(row);
    if (progress) progress(rows[index]);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(spec.jobs, static_cast<unsigned>(jobs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) execute(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) execute(i);
      });
    for (auto& t : pool) t.join();
  }
  return rows;
}

std::map<std::string, double> headline_metrics(const MetricLedger& m) {
  std::map<std::string, double> out;
  if (auto v = m.mean_lifetime()) out["mean_cluster_lifetime"] = *v;
  out["ended_regions"] = static_cast<double>(m.cluster_lifetimes.size());
  out["censored_regions"] = static_cast<double>(m.censored_ages.size());
  out["reconstructions"] = static_cast<double>(m.reconstruction_count);
  out["replacements"] = static_cast<double>(m.replacement_count);
  if (auto v = m.mean_overlap()) out["mean_overlap_rate"] = *v;
  if (auto v = m.mean_tti()) out["mean_tti"] = *v;
  out["packets_sent"] = static_cast<double>(m.packets_sent);
  out["packets_delivered"] = static_cast<double>(m.packets_delivered);
  if (m.dpdr) out["dpdr"] = *m.dpdr;
  if (m.interaction_delay) out["interaction_delay"] = *m.interaction_delay;
  return out;
}

void write_sweep_rows(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << "axis,value,scheme,seed,status,metric,metric_value\n";
  for (const auto& row : rows) {
    const std::string head = fmt::format("{},{},{},{}", to_string(axis), format_double(row.value), row.scheme, row.seed);
    if (!row.ok) {
      std::string reason = row.error;
      std::replace(reason.begin(), reason.end(), ',', ';');
      std::replace(reason.begin(), reason.end(), '\n', ' ');
      out << head << ",failed:" << reason << ",-,-\n";
      continue;
    }
    auto metrics = headline_metrics(row.metrics);
    if (row.achieved_tti) metrics["achieved_tti"] = *row.achieved_tti;
    for (const auto& [name, value] : metrics) out << head << ",ok," << name << ',' << format_double(value) << '\n';
  }
}

void write_summary(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << "axis,value,scheme,metric,mean,ci_low,ci_high,runs,failures\n";
  // Groups keep first-appearance order of (value, scheme).
  std::vector<std::pair<double, std::string>> groups;
  for (const auto& row : rows) {
    const std::pair key{row.value, row.scheme};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  for (const auto& [value, scheme] : groups) {
    std::map<std::string, std::vector<double>> samples;
    std::size_t failures = 0;
    for (const auto& row : rows) {
      if (row.value != value || row.scheme != scheme) continue;
      if (!row.ok) {
        ++failures;
        continue;
      }
      auto metrics = headline_metrics(row.metrics);
      if (row.achieved_tti) metrics["achieved_tti"] = *row.achieved_tti;
      for (const auto& [name, v] : metrics) samples[name].push_back(v);
    }
    const std::string head = fmt::format("{},{},{}", to_string(axis), format_double(value), scheme);
    if (samples.empty()) {
      out << head << ",failed,0,0,0,0," << failures << '\n';
      continue;
    }
    for (const auto& [name, values] : samples) {
      const Interval iv = bootstrap_mean(values);
      out << head << ',' << name << ',' << format_double(iv.mean) << ',' << format_double(iv.low) << ','
          << format_double(iv.high) << ',' << values.size() << ',' << failures << '\n';
    }
  }
}

std::vector<SummaryRow> parse_summary(std::istream& in) {
  std::vector<SummaryRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 9)
      throw Error(Errc::ParseError, fmt::format("summary line {}: expected 9 fields, got {}", line_no, cells.size()));
    auto number = [&](const std::string& text) {
      return parse_double(KeyValue{"summary", text, line_no});
    };
    SummaryRow row;
    row.axis = cells[0];
    row.value = number(cells[1]);
    row.scheme = cells[2];
    row.metric = cells[3];
    row.mean = number(cells[4]);
    row.ci_low = number(cells[5]);
    row.ci_high = number(cells[6]);
    row.runs = static_cast<std::size_t>(number(cells[7]));
    row.failures = static_cast<std::size_t>(number(cells[8]));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rcms
