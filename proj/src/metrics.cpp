#include "rcms/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rcms/keyvalue.hpp"

namespace rcms {

double overlap_rate(std::span<const Vec2> positions, std::span<const VehicleRole> roles,
                    std::span<const VehicleId> cores, double range) {
  std::size_t attached = 0;
  std::size_t overlapping = 0;
  for (std::size_t v = 0; v < roles.size(); ++v) {
    if (roles[v] == VehicleRole::Unattached) continue;
    ++attached;
    int covered = 0;
    for (VehicleId c : cores)
      if ((positions[c] - positions[v]).norm() <= range && ++covered >= 2) break;
    if (covered >= 2) ++overlapping;
  }
  if (attached == 0) throw Error(Errc::NoVehicles, "overlap rate needs at least one attached vehicle");
  return static_cast<double>(overlapping) / static_cast<double>(attached);
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::optional<double> mean_of(const std::vector<TimedValue>& v) {
  if (v.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& tv : v) sum += tv.value;
  return sum / static_cast<double>(v.size());
}

double number(std::string_view text, std::size_t event_index) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(Errc::MalformedLog, fmt::format("event {}: '{}' is not a number", event_index, text));
  return v;
}

std::uint64_t packet_id(std::string_view detail, std::size_t event_index) {
  const auto fields = split(detail, ':');
  std::uint64_t id = 0;
  const auto& f = fields.front();
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), id);
  if (ec != std::errc{} || ptr != f.data() + f.size())
    throw Error(Errc::MalformedLog, fmt::format("event {}: bad packet reference '{}'", event_index, detail));
  return id;
}

}  // namespace

std::optional<double> MetricLedger::mean_lifetime() const { return mean_of(cluster_lifetimes); }
std::optional<double> MetricLedger::mean_overlap() const { return mean_of(overlap_rate); }
std::optional<double> MetricLedger::mean_tti() const { return mean_of(tti_series); }

MetricLedger compute_metrics(const EventLog& log, double warm_up, double end_time) {
  MetricLedger m;
  std::map<RegionId, double> alive;
  std::map<std::uint64_t, bool> sent;  // packet -> delivered
  const auto& events = log.events();
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const bool measured = e.time >= warm_up;
    auto need_region = [&] {
      if (!e.region) throw Error(Errc::MalformedLog, fmt::format("event {}: {} without region", i, to_string(e.kind)));
      return *e.region;
    };
    switch (e.kind) {
      case EventKind::RegionCreate: {
        const RegionId r = need_region();
        if (!alive.emplace(r, e.time).second)
          throw Error(Errc::MalformedLog, fmt::format("event {}: region {} created twice", i, r));
        if (measured && e.detail == "merge") ++m.reconstruction_count;
        break;
      }
      case EventKind::RegionEnd: {
        const RegionId r = need_region();
        const auto it = alive.find(r);
        if (it == alive.end())
          throw Error(Errc::MalformedLog, fmt::format("event {}: region {} ends without being alive", i, r));
        if (measured) m.cluster_lifetimes.push_back(e.time - it->second);
        alive.erase(it);
        break;
      }
      case EventKind::Construct:
        if (measured && e.detail == "re") ++m.reconstruction_count;
        break;
      case EventKind::Replace:
        if (measured) ++m.replacement_count;
        break;
      case EventKind::Overlap:
        if (measured) m.overlap_rate.push_back({e.time, number(e.detail, i)});
        break;
      case EventKind::Tti:
        if (measured) m.tti_series.push_back({e.time, number(e.detail, i)});
        break;
      case EventKind::Regions:
        if (measured) {
          m.region_count.push_back({e.time, number(e.detail, i)});
          m.reconstruction_series.push_back({e.time, static_cast<double>(m.reconstruction_count)});
          m.replacement_series.push_back({e.time, static_cast<double>(m.replacement_count)});
        }
        break;
      case EventKind::PacketSent:
        if (measured) {
          if (!sent.emplace(packet_id(e.detail, i), false).second)
            throw Error(Errc::MalformedLog, fmt::format("event {}: packet sent twice", i));
          ++m.packets_sent;
        }
        break;
      case EventKind::PacketDelivered: {
        const auto id = packet_id(e.detail, i);
        const auto it = sent.find(id);
        if (it == sent.end()) break;  // generated before the measurement window
        if (it->second) throw Error(Errc::MalformedLog, fmt::format("event {}: packet {} delivered twice", i, id));
        it->second = true;
        const auto fields = split(e.detail, ':');
        if (fields.size() != 3) throw Error(Errc::MalformedLog, fmt::format("event {}: bad delivery detail", i));
        ++m.packets_delivered;
        m.packet_delays.push_back(e.time - number(fields[2], i));
        break;
      }
      case EventKind::Join:
      case EventKind::Leave:
      case EventKind::StaleAgreement:
      case EventKind::PacketDropped:
        break;
    }
  }
  for (const auto& [r, created] : alive) m.censored_ages.push_back(end_time - created);
  if (m.packets_sent > 0)
    m.dpdr = static_cast<double>(m.packets_delivered) / static_cast<double>(m.packets_sent);
  m.interaction_delay = mean_of(m.packet_delays);
  return m;
}

void write_metric_csv(std::ostream& out, const MetricLedger& m, std::string_view scheme, std::uint64_t seed,
                      double tick_length, double end_time, bool header) {
  if (header) out << "tick,scheme,seed,metric,value\n";
  auto tick_of = [&](double t) { return static_cast<long long>(std::llround(t / tick_length)); };
  auto row = [&](long long tick, std::string_view metric, double value) {
    fmt::print(out, "{},{},{},{},{}\n", tick, scheme, seed, metric, format_double(value));
  };
  auto series = [&](std::string_view metric, const std::vector<TimedValue>& s) {
    for (const auto& tv : s) row(tick_of(tv.time), metric, tv.value);
  };
  series("overlap_rate", m.overlap_rate);
  series("tti", m.tti_series);
  series("region_count", m.region_count);
  series("reconstruction_count", m.reconstruction_series);
  series("replacement_count", m.replacement_series);

  const long long last = tick_of(end_time);
  auto maybe = [&](std::string_view metric, const std::optional<double>& v) {
    if (v) row(last, metric, *v);
  };
  maybe("mean_cluster_lifetime", m.mean_lifetime());
  row(last, "ended_regions", static_cast<double>(m.cluster_lifetimes.size()));
  row(last, "censored_regions", static_cast<double>(m.censored_ages.size()));
  maybe("mean_overlap_rate", m.mean_overlap());
  maybe("mean_tti", m.mean_tti());
  row(last, "reconstructions", static_cast<double>(m.reconstruction_count));
  row(last, "replacements", static_cast<double>(m.replacement_count));
  row(last, "packets_sent", static_cast<double>(m.packets_sent));
  row(last, "packets_delivered", static_cast<double>(m.packets_delivered));
  maybe("dpdr", m.dpdr);
  maybe("interaction_delay", m.interaction_delay);
}

std::vector<MetricRow> parse_metric_csv(std::istream& in) {
  std::vector<MetricRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line.rfind("tick,", 0) == 0) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw Error(Errc::ParseError, fmt::format("metric csv line {}: expected 5 fields", n));
    MetricRow r;
    r.tick = std::stoll(f[0]);
    r.scheme = f[1];
    r.seed = std::stoull(f[2]);
    r.metric = f[3];
    r.value = number(f[4], n);
    rows.push_back(std::move(r));
  }
  return rows;
}

Interval bootstrap_mean(std::span<const double> values, std::size_t resamples, double confidence,
                        std::uint64_t seed) {
  Interval iv;
  iv.samples = values.size();
  if (values.empty()) return iv;
  iv.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() == 1 || resamples == 0) {
    iv.low = iv.high = iv.mean;
    return iv;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& mean : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) s += values[pick(rng)];
    mean = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - confidence) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::clamp(q * static_cast<double>(resamples - 1), 0.0,
                                                         static_cast<double>(resamples - 1)));
    return means[idx];
  };
  iv.low = at(tail);
  iv.high = at(1.0 - tail);
  return iv;
}

}  // namespace rcms
