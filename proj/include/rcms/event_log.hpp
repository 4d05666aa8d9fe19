#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rcms/core_types.hpp"

namespace rcms {

enum class EventKind {
  Construct,       // vehicle starts region construction; detail "initial" or "re"
  RegionCreate,    // vehicle = core; detail "self", "merge" or "head"
  RegionEnd,       // vehicle = last core; detail "dissolve", "merge", "empty" or "head_lost"
  Join,            // detail = core id
  Leave,           // detail = reason
  Replace,         // vehicle = new core; detail = previous core
  StaleAgreement,  // agreement arrived after the vehicle moved on; detail = core id
  Overlap,         // per tick; detail = fraction
  Tti,             // per tick; detail = traffic index
  Regions,         // per tick; detail = live region count
  PacketSent,      // vehicle = source; detail = "<packet>:<destination>"
  PacketDelivered, // vehicle = destination; detail = "<packet>:<hops>:<created_at>"
  PacketDropped,   // vehicle = holder; detail = "<packet>:<reason>"
};

std::string_view to_string(EventKind kind);
std::optional<EventKind> event_kind_from(std::string_view text);

struct LogEvent {
  double time = 0.0;
  EventKind kind = EventKind::Construct;
  std::optional<VehicleId> vehicle;
  std::optional<RegionId> region;
  std::string detail;

  friend bool operator==(const LogEvent&, const LogEvent&) = default;
};

/// Append-only record of protocol and traffic events, one CSV line each:
/// `time,event_kind,vehicle_id,region_id,detail`, with `-` for absent ids.
class EventLog {
 public:
  void append(double time, EventKind kind, std::optional<VehicleId> vehicle, std::optional<RegionId> region,
              std::string detail = {});
  const std::vector<LogEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  void write(std::ostream& out) const;
  std::string str() const;
  /// Throws MalformedLog with the offending line number.
  static EventLog parse(std::istream& in);

 private:
  std::vector<LogEvent> events_;
};

}  // namespace rcms
