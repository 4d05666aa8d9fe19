#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "rcms/engine.hpp"
#include "rcms/keyvalue.hpp"

namespace rcms {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(Scenario&, const KeyValue&, const std::filesystem::path&)> set;
  std::function<std::string(const Scenario&)> get;
};

Field real(std::string section, std::string key, std::function<double&(Scenario&)> ref) {
  return {std::move(section), std::move(key),
          [ref](Scenario& s, const KeyValue& kv, const std::filesystem::path&) { ref(s) = parse_double(kv); },
          [ref](const Scenario& s) {
            Scenario copy = s;
            return format_double(ref(copy));
          }};
}

template <typename Int>
Field integer(std::string section, std::string key, std::function<Int&(Scenario&)> ref, long long min_value) {
  return {std::move(section), std::move(key),
          [ref, min_value](Scenario& s, const KeyValue& kv, const std::filesystem::path&) {
            const long long v = parse_int(kv);
            if (v < min_value)
              throw Error(Errc::ConfigError, fmt::format("line {}: {} must be at least {}", kv.line, kv.key, min_value));
            ref(s) = static_cast<Int>(v);
          },
          [ref](const Scenario& s) {
            Scenario copy = s;
            return std::to_string(ref(copy));
          }};
}

Field boolean(std::string section, std::string key, std::function<bool&(Scenario&)> ref) {
  return {std::move(section), std::move(key),
          [ref](Scenario& s, const KeyValue& kv, const std::filesystem::path&) { ref(s) = parse_bool(kv); },
          [ref](const Scenario& s) {
            Scenario copy = s;
            return std::string(ref(copy) ? "true" : "false");
          }};
}

Field path(std::string section, std::string key, std::function<std::filesystem::path&(Scenario&)> ref) {
  return {std::move(section), std::move(key),
          [ref](Scenario& s, const KeyValue& kv, const std::filesystem::path& base) {
            std::filesystem::path p(kv.value);
            ref(s) = (p.empty() || p.is_absolute() || base.empty()) ? p : base / p;
          },
          [ref](const Scenario& s) {
            Scenario copy = s;
            return ref(copy).string();
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using S = Scenario;
    f.push_back(integer<std::size_t>("scenario", "vehicle_count", [](S& s) -> std::size_t& { return s.vehicle_count; }, 1));
    f.push_back(real("scenario", "sim_duration", [](S& s) -> double& { return s.sim_duration; }));
    f.push_back(real("scenario", "warm_up", [](S& s) -> double& { return s.warm_up; }));
    f.push_back(real("scenario", "tti_window", [](S& s) -> double& { return s.tti_window; }));
    f.push_back(integer<std::uint64_t>("scenario", "seed", [](S& s) -> std::uint64_t& { return s.seed; }, 0));
    f.push_back({"scenario", "scheme",
                 [](S& s, const KeyValue& kv, const std::filesystem::path&) {
                   if (kv.value != "rcms" && kv.value != "vmasc_like" && kv.value != "msca_like")
                     throw Error(Errc::ConfigError,
                                 fmt::format("line {}: scheme must be rcms, vmasc_like or msca_like", kv.line));
                   s.scheme = kv.value;
                 },
                 [](const S& s) { return s.scheme; }});
    f.push_back({"scenario", "router",
                 [](S& s, const KeyValue& kv, const std::filesystem::path&) {
                   auto r = router_from(kv.value);
                   if (!r)
                     throw Error(Errc::ConfigError,
                                 fmt::format("line {}: router must be rcms, cbdrp_like or gpsr_like", kv.line));
                   s.router = *r;
                 },
                 [](const S& s) { return std::string(to_string(s.router)); }});
    f.push_back(real("scenario", "min_link_lifetime", [](S& s) -> double& { return s.min_link_lifetime; }));
    f.push_back(boolean("scenario", "validate_each_tick", [](S& s) -> bool& { return s.validate_each_tick; }));

    f.push_back(path("road", "network_file", [](S& s) -> std::filesystem::path& { return s.network_file; }));
    f.push_back(path("road", "trace_file", [](S& s) -> std::filesystem::path& { return s.trace_file; }));
    f.push_back(real("road", "grid_extent", [](S& s) -> double& { return s.grid_extent; }));
    f.push_back(real("road", "block_length", [](S& s) -> double& { return s.block_length; }));
    f.push_back(real("road", "free_flow_speed", [](S& s) -> double& { return s.free_flow_speed; }));
    f.push_back(integer<int>("road", "lanes_per_direction", [](S& s) -> int& { return s.lanes_per_direction; }, 1));

    f.push_back(real("mobility", "max_speed", [](S& s) -> double& { return s.mobility.max_speed; }));
    f.push_back(real("mobility", "min_desired_speed", [](S& s) -> double& { return s.mobility.min_desired_speed; }));
    f.push_back(real("mobility", "acceleration", [](S& s) -> double& { return s.mobility.acceleration; }));
    f.push_back(real("mobility", "comfortable_decel", [](S& s) -> double& { return s.mobility.comfortable_decel; }));
    f.push_back(real("mobility", "max_decel", [](S& s) -> double& { return s.mobility.max_decel; }));
    f.push_back(real("mobility", "reaction_time", [](S& s) -> double& { return s.mobility.reaction_time; }));
    f.push_back(real("mobility", "vehicle_length", [](S& s) -> double& { return s.mobility.vehicle_length; }));
    f.push_back(real("mobility", "min_gap", [](S& s) -> double& { return s.mobility.min_gap; }));
    f.push_back(boolean("mobility", "signals", [](S& s) -> bool& { return s.mobility.signals; }));
    f.push_back(real("mobility", "signal_cycle", [](S& s) -> double& { return s.mobility.signal_cycle; }));
    f.push_back(real("mobility", "green_fraction", [](S& s) -> double& { return s.mobility.green_fraction; }));
    f.push_back(real("mobility", "p_straight", [](S& s) -> double& { return s.mobility.p_straight; }));
    f.push_back(real("mobility", "p_left", [](S& s) -> double& { return s.mobility.p_left; }));
    f.push_back(real("mobility", "p_right", [](S& s) -> double& { return s.mobility.p_right; }));

    f.push_back(real("protocol", "zeta", [](S& s) -> double& { return s.protocol.zeta; }));
    f.push_back(real("protocol", "updating_interval", [](S& s) -> double& { return s.protocol.updating_interval; }));
    f.push_back(real("protocol", "tti_congestion_threshold",
                     [](S& s) -> double& { return s.protocol.tti_congestion_threshold; }));
    f.push_back(real("protocol", "overlap_agg_fraction", [](S& s) -> double& { return s.protocol.overlap_agg_fraction; }));
    f.push_back(real("protocol", "replacement_loss_fraction",
                     [](S& s) -> double& { return s.protocol.replacement_loss_fraction; }));
    f.push_back(real("protocol", "decomposition_threshold",
                     [](S& s) -> double& { return s.protocol.decomposition_threshold; }));
    f.push_back(real("protocol", "speed_change_fraction", [](S& s) -> double& { return s.protocol.speed_change_fraction; }));
    f.push_back(integer<int>("protocol", "max_read_retries", [](S& s) -> int& { return s.protocol.max_read_retries; }, 0));
    f.push_back(real("protocol", "approach_radius", [](S& s) -> double& { return s.protocol.approach_radius; }));
    f.push_back(real("protocol", "turn_match_cosine", [](S& s) -> double& { return s.protocol.turn_match_cosine; }));
    f.push_back(integer<int>("protocol", "replacement_min_roster",
                             [](S& s) -> int& { return s.protocol.replacement_min_roster; }, 1));
    f.push_back({"protocol", "replacement_mode",
                 [](S& s, const KeyValue& kv, const std::filesystem::path&) {
                   if (kv.value == "centered") {
                     s.protocol.replacement_mode = ReplacementMode::Centered;
                   } else if (kv.value == "verbatim") {
                     s.protocol.replacement_mode = ReplacementMode::Verbatim;
                   } else {
                     throw Error(Errc::ConfigError,
                                 fmt::format("line {}: replacement_mode must be centered or verbatim", kv.line));
                   }
                 },
                 [](const S& s) {
                   return std::string(s.protocol.replacement_mode == ReplacementMode::Centered ? "centered" : "verbatim");
                 }});
    f.push_back(real("protocol", "distance_scale", [](S& s) -> double& { return s.protocol.distance_scale; }));
    f.push_back(real("protocol", "speed_scale", [](S& s) -> double& { return s.protocol.speed_scale; }));

    f.push_back(real("radio", "comm_range", [](S& s) -> double& { return s.radio.comm_range; }));
    f.push_back(real("radio", "reliable_radius", [](S& s) -> double& { return s.radio.reliable_radius; }));
    f.push_back(real("radio", "loss_exponent", [](S& s) -> double& { return s.radio.loss_exponent; }));
    f.push_back(real("radio", "base_delay", [](S& s) -> double& { return s.radio.base_delay; }));
    f.push_back(real("radio", "data_rate", [](S& s) -> double& { return s.radio.data_rate; }));
    f.push_back(integer<std::size_t>("radio", "control_bytes", [](S& s) -> std::size_t& { return s.radio.control_bytes; }, 1));
    f.push_back(integer<std::size_t>("radio", "data_bytes", [](S& s) -> std::size_t& { return s.radio.data_bytes; }, 1));
    f.push_back(real("radio", "max_queue_delay", [](S& s) -> double& { return s.radio.max_queue_delay; }));
    f.push_back(integer<std::uint64_t>("radio", "rng_seed", [](S& s) -> std::uint64_t& { return s.radio.rng_seed; }, 0));

    f.push_back(integer<std::size_t>("packets", "count", [](S& s) -> std::size_t& { return s.packets.count; }, 0));
    f.push_back(real("packets", "start", [](S& s) -> double& { return s.packets.start; }));
    f.push_back(real("packets", "window", [](S& s) -> double& { return s.packets.window; }));
    f.push_back(real("packets", "ttl", [](S& s) -> double& { return s.packets.ttl; }));
    f.push_back(integer<int>("packets", "hop_retries", [](S& s) -> int& { return s.packets.hop_retries; }, 0));

    f.push_back({"srp", "mode",
                 [](S& s, const KeyValue& kv, const std::filesystem::path&) {
                   if (kv.value == "fallback") {
                     s.srp.mode = SrpMode::Fallback;
                   } else if (kv.value == "train") {
                     s.srp.mode = SrpMode::Train;
                   } else if (kv.value == "checkpoint") {
                     s.srp.mode = SrpMode::Checkpoint;
                   } else {
                     throw Error(Errc::ConfigError,
                                 fmt::format("line {}: srp mode must be fallback, train or checkpoint", kv.line));
                   }
                 },
                 [](const S& s) {
                   switch (s.srp.mode) {
                     case SrpMode::Fallback: return std::string("fallback");
                     case SrpMode::Train: return std::string("train");
                     case SrpMode::Checkpoint: return std::string("checkpoint");
                   }
                   return std::string();
                 }});
    f.push_back(path("srp", "checkpoint", [](S& s) -> std::filesystem::path& { return s.srp.checkpoint; }));
    f.push_back(integer<int>("srp", "hidden", [](S& s) -> int& { return s.srp.hidden; }, 1));
    f.push_back(integer<int>("srp", "sequence_length", [](S& s) -> int& { return s.srp.sequence_length; }, 2));
    f.push_back(integer<int>("srp", "horizon", [](S& s) -> int& { return s.srp.horizon; }, 1));
    f.push_back(integer<int>("srp", "epochs", [](S& s) -> int& { return s.srp.epochs; }, 0));
    f.push_back(real("srp", "learning_rate", [](S& s) -> double& { return s.srp.learning_rate; }));
    f.push_back(integer<std::size_t>("srp", "history_window", [](S& s) -> std::size_t& { return s.srp.history_window; }, 2));
    return f;
  }();
  return table;
}

}  // namespace

void Scenario::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw Error(Errc::ConfigError, fmt::format("{}: {}", field, rule));
  };
  require(vehicle_count >= 1, "scenario.vehicle_count", "must be at least 1");
  require(warm_up >= 0.0, "scenario.warm_up", "must be non-negative");
  require(sim_duration > warm_up, "scenario.sim_duration", "must exceed warm_up");
  require(tti_window > 0.0, "scenario.tti_window", "must be positive");
  require(min_link_lifetime >= 0.0, "scenario.min_link_lifetime", "must be non-negative");
  require(scheme == "rcms" || scheme == "vmasc_like" || scheme == "msca_like", "scenario.scheme",
          "must be rcms, vmasc_like or msca_like");
  require(grid_extent > 0.0, "road.grid_extent", "must be positive");
  require(block_length > 0.0 && block_length <= grid_extent, "road.block_length", "must be in (0, grid_extent]");
  require(free_flow_speed >= 0.0, "road.free_flow_speed", "must be non-negative (0 = derived)");
  require(lanes_per_direction >= 1, "road.lanes_per_direction", "must be at least 1");
  require(packets.start >= 0.0, "packets.start", "must be non-negative");
  require(packets.window >= 0.0, "packets.window", "must be non-negative");
  require(packets.ttl > 0.0, "packets.ttl", "must be positive");
  require(packets.hop_retries >= 0, "packets.hop_retries", "must be non-negative");
  require(srp.mode != SrpMode::Checkpoint || !srp.checkpoint.empty(), "srp.checkpoint", "required in checkpoint mode");
  require(srp.hidden >= 1, "srp.hidden", "must be at least 1");
  require(srp.sequence_length >= 2, "srp.sequence_length", "must be at least 2");
  require(srp.horizon >= 1, "srp.horizon", "must be at least 1");
  require(srp.epochs >= 0, "srp.epochs", "must be non-negative");
  require(srp.learning_rate > 0.0, "srp.learning_rate", "must be positive");
  require(srp.history_window >= 2, "srp.history_window", "must be at least 2");
  require(srp.mode != SrpMode::Train || warm_up >= protocol.updating_interval * (srp.sequence_length + srp.horizon),
          "scenario.warm_up", "too short to collect srp training windows");
  mobility.validate();
  radio.validate();
  ProtocolConfig effective = protocol;
  effective.comm_range = radio.comm_range;
  effective.validate();
}

Scenario parse_scenario(std::istream& in, std::string_view source_name, const std::filesystem::path& base_dir) {
  std::vector<Section> sections;
  try {
    sections = parse_sections(in, source_name);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, e.what());
  }
  Scenario scenario;
  for (const auto& section : sections) {
    const bool known_section = std::any_of(fields().begin(), fields().end(),
                                           [&](const Field& f) { return f.section == section.name; });
    if (!known_section)
      throw Error(Errc::ConfigError,
                  fmt::format("{}:{}: unknown section [{}]", source_name, section.line, section.name));
    for (const auto& kv : section.entries) {
      auto it = std::find_if(fields().begin(), fields().end(),
                             [&](const Field& f) { return f.section == section.name && f.key == kv.key; });
      if (it == fields().end())
        throw Error(Errc::ConfigError,
                    fmt::format("{}:{}: unknown key '{}' in [{}]", source_name, kv.line, kv.key, section.name));
      try {
        it->set(scenario, kv, base_dir);
      } catch (const Error& e) {
        throw Error(Errc::ConfigError, fmt::format("{}: {}.{}: {}", source_name, section.name, kv.key, e.what()));
      }
    }
  }
  scenario.protocol.comm_range = scenario.radio.comm_range;
  try {
    scenario.validate();
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, fmt::format("{}: {}", source_name, e.what()));
  }
  return scenario;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, fmt::format("cannot open scenario '{}'", path.string()));
  return parse_scenario(in, path.string(), path.parent_path());
}

void write_scenario(std::ostream& out, const Scenario& scenario) {
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(scenario) << '\n';
  }
}

}  // namespace rcms
