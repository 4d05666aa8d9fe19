#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rcms/engine.hpp"
#include "rcms/keyvalue.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kInvariantError = 3;

template <typename T>
std::vector<T> parse_list(const std::string& text, std::string_view what) {
  std::vector<T> out;
  for (const auto& item : rcms::split(text, ',')) {
    if (item.empty()) continue;
    const double v = rcms::parse_double(rcms::KeyValue{std::string(what), item, 0});
    if constexpr (std::is_integral_v<T>) {
      if (v < 0 || v != static_cast<double>(static_cast<T>(v)))
        throw rcms::Error(rcms::Errc::ConfigError, fmt::format("{}: '{}' is not a non-negative integer", what, item));
      out.push_back(static_cast<T>(v));
    } else {
      out.push_back(v);
    }
  }
  if (out.empty()) throw rcms::Error(rcms::Errc::ConfigError, fmt::format("{}: empty list", what));
  return out;
}

int run_command(const std::filesystem::path& scenario_file, std::optional<std::uint64_t> seed,
                const std::filesystem::path& out, bool validate) {
  rcms::Scenario scenario = rcms::load_scenario(scenario_file);
  if (seed) scenario.seed = *seed;
  scenario.validate_each_tick = scenario.validate_each_tick || validate;
  const auto result = rcms::run(scenario);
  rcms::write_run(out, scenario, result);
  const auto& m = result.metrics;
  fmt::print("{} seed {}: {} regions ended, {} censored, {} reconstructions, {} replacements\n", scenario.scheme,
             scenario.seed, m.cluster_lifetimes.size(), m.censored_ages.size(), m.reconstruction_count,
             m.replacement_count);
  if (auto v = m.mean_lifetime()) fmt::print("mean cluster lifetime {:.3f} s\n", *v);
  if (auto v = m.mean_overlap()) fmt::print("mean overlap rate {:.4f}\n", *v);
  if (m.dpdr) fmt::print("dpdr {:.4f}\n", *m.dpdr);
  if (m.interaction_delay) fmt::print("interaction delay {:.4f} s\n", *m.interaction_delay);
  if (!result.violations.empty()) {
    for (const auto& v : result.violations) fmt::print(stderr, "invariant violation: {}\n", v);
    return kInvariantError;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-based clustering simulator"};
  app.require_subcommand(1);

  std::filesystem::path scenario_file;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  bool no_validate = false;
  auto* run = app.add_subcommand("run", "Run one scenario and write events, metrics and the effective scenario");
  run->add_option("--scenario", scenario_file, "Scenario file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_flag("--no-validate", no_validate, "Skip the per-tick invariant validators");

  std::string axis_name;
  std::string values_text;
  std::string seeds_text;
  std::string schemes_text = "rcms";
  unsigned jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep and write per-run rows and a summary");
  sweep->add_option("--scenario", scenario_file, "Scenario template")->required();
  sweep->add_option("--axis", axis_name, "max_speed, tti_target or packet_count")->required();
  sweep->add_option("--values", values_text, "Comma-separated axis values")->required();
  sweep->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  sweep->add_option("--schemes", schemes_text, "rcms, vmasc_like, msca_like, cbdrp_like, gpsr_like");
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--jobs", jobs, "Worker threads");

  std::filesystem::path summary_file;
  auto* plot = app.add_subcommand("plot", "Draw one SVG chart per metric of a sweep summary");
  plot->add_option("--summary", summary_file, "summary.csv from a sweep")->required();
  plot->add_option("--out", out_dir, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check a scenario file without running it");
  validate->add_option("--scenario", scenario_file, "Scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return run_command(scenario_file, seed, out_dir, !no_validate);

    if (*sweep) {
      const rcms::Scenario base = rcms::load_scenario(scenario_file);
      rcms::SweepSpec spec;
      const auto axis = rcms::sweep_axis_from(axis_name);
      if (!axis) throw rcms::Error(rcms::Errc::ConfigError, fmt::format("unknown axis '{}'", axis_name));
      spec.axis = *axis;
      spec.values = parse_list<double>(values_text, "--values");
      spec.seeds = parse_list<std::uint64_t>(seeds_text, "--seeds");
      spec.schemes = rcms::split(schemes_text, ',');
      spec.jobs = jobs;
      const auto rows = rcms::sweep(base, spec, [](const rcms::SweepRow& row) {
        fmt::print("{} value {} seed {}: {}\n", row.scheme, row.value, row.seed, row.ok ? "ok" : row.error);
      });
      std::filesystem::create_directories(out_dir);
      std::ofstream runs(out_dir / "runs.csv");
      rcms::write_sweep_rows(runs, spec.axis, rows);
      std::ofstream summary(out_dir / "summary.csv");
      rcms::write_summary(summary, spec.axis, rows);
      const auto failed = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; });
      fmt::print("{} runs, {} failed; summary in {}\n", rows.size(), failed, (out_dir / "summary.csv").string());
      return 0;
    }

    if (*plot) {
      std::ifstream in(summary_file);
      if (!in) throw rcms::Error(rcms::Errc::ConfigError, fmt::format("cannot open '{}'", summary_file.string()));
      for (const auto& file : rcms::plot_summary(rcms::parse_summary(in), out_dir)) fmt::print("{}\n", file.string());
      return 0;
    }

    if (*validate) {
      rcms::load_scenario(scenario_file);
      fmt::print("{}: ok\n", scenario_file.string());
      return 0;
    }
  } catch (const rcms::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    if (e.code() == rcms::Errc::InvariantViolation) return kInvariantError;
    return kConfigError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
