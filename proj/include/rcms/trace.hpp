#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>

#include "rcms/core_types.hpp"
#include "rcms/road.hpp"

namespace rcms {

struct TraceOptions {
  /// Resample every vehicle onto a uniform grid with this step (linear interpolation).
  std::optional<double> resample_interval;
  /// Points farther than this from every segment raise OffMapError, m.
  double off_map_tolerance = 30.0;
};

/// Reads `vehicle_id,timestamp_s,x_m,y_m,speed_mps` rows (with header).
/// Throws ParseError for malformed rows or non-increasing timestamps per vehicle.
std::map<VehicleId, Trajectory> load_trace(const std::filesystem::path& path, const RoadNetwork& network,
                                           const TraceOptions& options = {});
std::map<VehicleId, Trajectory> parse_trace(std::istream& in, const RoadNetwork& network,
                                            const TraceOptions& options = {},
                                            std::string_view source_name = "<trace>");

void write_trace(std::ostream& out, const std::map<VehicleId, Trajectory>& trajectories);

}  // namespace rcms
