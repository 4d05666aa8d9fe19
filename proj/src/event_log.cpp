#include "rcms/event_log.hpp"

#include <array>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "rcms/keyvalue.hpp"

namespace rcms {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 13> kNames{{
    {EventKind::Construct, "construct"},
    {EventKind::RegionCreate, "region_create"},
    {EventKind::RegionEnd, "region_end"},
    {EventKind::Join, "join"},
    {EventKind::Leave, "leave"},
    {EventKind::Replace, "replace"},
    {EventKind::StaleAgreement, "stale_agreement"},
    {EventKind::Overlap, "overlap"},
    {EventKind::Tti, "tti"},
    {EventKind::Regions, "regions"},
    {EventKind::PacketSent, "packet_sent"},
    {EventKind::PacketDelivered, "packet_delivered"},
    {EventKind::PacketDropped, "packet_dropped"},
}};

constexpr std::string_view kHeader = "time,event_kind,vehicle_id,region_id,detail";

std::string id_text(const std::optional<std::uint32_t>& id) { return id ? std::to_string(*id) : std::string("-"); }

}  // namespace

std::string_view to_string(EventKind kind) {
  for (const auto& [k, name] : kNames)
    if (k == kind) return name;
  return "?";
}

std::optional<EventKind> event_kind_from(std::string_view text) {
  for (const auto& [k, name] : kNames)
    if (name == text) return k;
  return std::nullopt;
}

void EventLog::append(double time, EventKind kind, std::optional<VehicleId> vehicle, std::optional<RegionId> region,
                      std::string detail) {
  if (detail.find_first_of(",\n") != std::string::npos)
    throw Error(Errc::InvalidArgument, fmt::format("event detail '{}' contains a separator", detail));
  events_.push_back({time, kind, vehicle, region, std::move(detail)});
}

void EventLog::write(std::ostream& out) const {
  out << kHeader << '\n';
  for (const auto& e : events_)
    out << format_double(e.time) << ',' << to_string(e.kind) << ',' << id_text(e.vehicle) << ','
        << id_text(e.region) << ',' << e.detail << '\n';
}

std::string EventLog::str() const {
  std::ostringstream out;
  write(out);
  return out.str();
}

EventLog EventLog::parse(std::istream& in) {
  EventLog log;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](std::string_view why) {
    throw Error(Errc::MalformedLog, fmt::format("event log line {}: {}", line_no, why));
  };
  auto parse_id = [&](const std::string& text) -> std::optional<std::uint32_t> {
    if (text == "-") return std::nullopt;
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) fail(fmt::format("bad id '{}'", text));
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kHeader) fail("missing header");
      continue;
    }
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != 5) fail(fmt::format("expected 5 fields, got {}", fields.size()));
    double t = 0.0;
    const auto& tf = fields[0];
    const auto [ptr, ec] = std::from_chars(tf.data(), tf.data() + tf.size(), t);
    if (ec != std::errc{} || ptr != tf.data() + tf.size()) fail(fmt::format("bad time '{}'", tf));
    const auto kind = event_kind_from(fields[1]);
    if (!kind) fail(fmt::format("unknown event kind '{}'", fields[1]));
    log.events_.push_back({t, *kind, parse_id(fields[2]), parse_id(fields[3]), fields[4]});
  }
  if (line_no == 0) fail("empty log");
  return log;
}

}  // namespace rcms
