#include "rcms/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "rcms/keyvalue.hpp"

namespace rcms {

namespace {

struct Row {
  double time;
  Vec2 position;
  double speed;
};

double parse_field(const std::string& text, std::string_view source, std::size_t line, const char* column) {
  KeyValue kv{column, text, line};
  try {
    return parse_double(kv);
  } catch (const Error&) {
    throw Error(Errc::ParseError, fmt::format("{}:{}: bad {} '{}'", source, line, column, text));
  }
}

std::vector<Row> resample(const std::vector<Row>& rows, double step) {
  if (rows.size() < 2) return rows;
  std::vector<Row> out;
  const double t0 = rows.front().time;
  const double t1 = rows.back().time;
  std::size_t seg = 0;
  for (std::size_t k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * step;
    if (t > t1 + 1e-9) break;
    while (seg + 2 < rows.size() && rows[seg + 1].time < t) ++seg;
    const auto& a = rows[seg];
    const auto& b = rows[seg + 1];
    const double w = std::clamp((t - a.time) / (b.time - a.time), 0.0, 1.0);
    out.push_back({t, a.position + (b.position - a.position) * w, a.speed + (b.speed - a.speed) * w});
  }
  return out;
}

}  // namespace

std::map<VehicleId, Trajectory> load_trace(const std::filesystem::path& path, const RoadNetwork& network,
                                           const TraceOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ParseError, fmt::format("cannot open trace '{}'", path.string()));
  return parse_trace(in, network, options, path.string());
}

std::map<VehicleId, Trajectory> parse_trace(std::istream& in, const RoadNetwork& network,
                                            const TraceOptions& options, std::string_view source_name) {
  std::map<VehicleId, std::vector<Row>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (!header_seen) {
      header_seen = true;
      if (fields.size() == 5 && fields[0] == "vehicle_id") continue;
      throw Error(Errc::ParseError,
                  fmt::format("{}:{}: expected header vehicle_id,timestamp_s,x_m,y_m,speed_mps", source_name, line_no));
    }
    if (fields.size() != 5)
      throw Error(Errc::ParseError, fmt::format("{}:{}: expected 5 columns, got {}", source_name, line_no, fields.size()));
    const double id = parse_field(fields[0], source_name, line_no, "vehicle_id");
    if (id < 0 || id != std::floor(id))
      throw Error(Errc::ParseError, fmt::format("{}:{}: vehicle_id must be a nonnegative integer", source_name, line_no));
    Row r{parse_field(fields[1], source_name, line_no, "timestamp_s"),
          {parse_field(fields[2], source_name, line_no, "x_m"), parse_field(fields[3], source_name, line_no, "y_m")},
          parse_field(fields[4], source_name, line_no, "speed_mps")};
    if (r.speed < 0.0)
      throw Error(Errc::ParseError, fmt::format("{}:{}: negative speed", source_name, line_no));
    auto& list = rows[static_cast<VehicleId>(id)];
    if (!list.empty() && !(r.time > list.back().time))
      throw Error(Errc::ParseError, fmt::format("{}:{}: vehicle {} timestamps must strictly increase",
                                                source_name, line_no, static_cast<VehicleId>(id)));
    list.push_back(r);
  }

  std::map<VehicleId, Trajectory> out;
  for (auto& [id, list] : rows) {
    if (options.resample_interval) {
      if (!(*options.resample_interval > 0.0))
        throw Error(Errc::InvalidArgument, "resample interval must be > 0");
      list = resample(list, *options.resample_interval);
    }
    Trajectory traj(id, list.size());
    Vec2 previous_speed;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& r = list[i];
      const auto proj = network.project(r.position);
      if (proj.distance > options.off_map_tolerance)
        throw Error(Errc::OffMapError, fmt::format("vehicle {} at t={} is {} m from the nearest road", id,
                                                   r.time, proj.distance));
      Vec2 dir;
      if (list.size() > 1) {
        const auto& a = list[i + 1 < list.size() ? i : i - 1];
        const auto& b = list[i + 1 < list.size() ? i + 1 : i];
        dir = b.position - a.position;
      }
      if (dir.norm() > 0.0) dir = dir * (1.0 / dir.norm());
      else dir = network.unit(proj.segment_id);
      VehicleState s;
      s.vehicle_id = id;
      s.timestamp = r.time;
      s.position = r.position;
      s.direction = dir;
      s.speed = dir * r.speed;
      if (i > 0) s.acceleration = (s.speed - previous_speed) * (1.0 / (r.time - list[i - 1].time));
      previous_speed = s.speed;
      s.segment_id = proj.segment_id;
      s.segment_fraction = proj.fraction;
      traj.append(s);
    }
    out.emplace(id, std::move(traj));
  }
  return out;
}

void write_trace(std::ostream& out, const std::map<VehicleId, Trajectory>& trajectories) {
  out << "vehicle_id,timestamp_s,x_m,y_m,speed_mps\n";
  for (const auto& [id, traj] : trajectories)
    for (const auto& s : traj)
      out << fmt::format("{},{},{},{},{}\n", id, s.timestamp, s.position.x, s.position.y, s.speed.norm());
}

}  // namespace rcms
