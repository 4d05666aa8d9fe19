#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcms/core_types.hpp"
#include "rcms/event_log.hpp"

namespace rcms {

/// Fraction of attached vehicles within `range` of at least two distinct
/// cores; a core counts as covered by itself. Throws NoVehicles when nobody is attached.
double overlap_rate(std::span<const Vec2> positions, std::span<const VehicleRole> roles,
                    std::span<const VehicleId> cores, double range);

struct TimedValue {
  double time = 0.0;
  double value = 0.0;
  friend bool operator==(const TimedValue&, const TimedValue&) = default;
};

/// Evaluation quantities of one run, derived from its event log only.
struct MetricLedger {
  std::vector<double> cluster_lifetimes;  // regions ended after warm-up
  std::vector<double> censored_ages;      // regions still alive at the end
  std::uint64_t reconstruction_count = 0; // re-constructions plus merges
  std::uint64_t replacement_count = 0;
  std::vector<TimedValue> overlap_rate;
  std::vector<TimedValue> tti_series;
  std::vector<TimedValue> region_count;
  std::vector<TimedValue> reconstruction_series;  // cumulative, per tick
  std::vector<TimedValue> replacement_series;     // cumulative, per tick
  std::uint64_t packets_sent = 0;
  std::uint64_t packets_delivered = 0;
  std::optional<double> dpdr;               // absent without packets
  std::optional<double> interaction_delay;  // absent without deliveries
  std::vector<double> packet_delays;

  std::optional<double> mean_lifetime() const;
  std::optional<double> mean_overlap() const;
  std::optional<double> mean_tti() const;

  friend bool operator==(const MetricLedger&, const MetricLedger&) = default;
};

/// Throws MalformedLog for inconsistent records (e.g. a region ending twice).
MetricLedger compute_metrics(const EventLog& log, double warm_up, double end_time);

/// Rows `tick,scheme,seed,metric,value`. Per-tick series use their tick
/// index; run totals use the final tick.
void write_metric_csv(std::ostream& out, const MetricLedger& ledger, std::string_view scheme, std::uint64_t seed,
                      double tick_length, double end_time, bool header = true);

struct MetricRow {
  long long tick = 0;
  std::string scheme;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

std::vector<MetricRow> parse_metric_csv(std::istream& in);

struct Interval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::size_t samples = 0;
};

/// Mean with a percentile bootstrap interval at `confidence`.
Interval bootstrap_mean(std::span<const double> values, std::size_t resamples = 2000, double confidence = 0.95,
                        std::uint64_t seed = 7);

}  // namespace rcms
