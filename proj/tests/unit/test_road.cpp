#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "rcms/mobility.hpp"
#include "rcms/road.hpp"
#include "rcms/trace.hpp"

using namespace rcms;

namespace {

RoadNetwork two_segments(double w0, double w1, double v0, double v1) {
  std::vector<Intersection> nodes{{0, {0, 0}, {0}}, {1, {500, 0}, {0, 1}}, {2, {1000, 0}, {1}}};
  std::vector<RoadSegment> segs{{0, 500, w0, v0, 0, 1, 1}, {1, 500, w1, v1, 1, 2, 1}};
  return RoadNetwork(nodes, segs);
}

std::shared_ptr<const RoadNetwork> grid(double extent, double block) {
  return std::make_shared<RoadNetwork>(RoadNetwork::grid(extent, block, 15.0));
}

SegmentId find_segment(const RoadNetwork& net, IntersectionId from, IntersectionId to) {
  for (const auto& s : net.segments())
    if (s.from == from && s.to == to) return s.segment_id;
  FAIL("segment not found");
  return kNoSegment;
}

}  // namespace

TEST_CASE("traffic index examples") {
  const auto net = two_segments(1, 2, 15, 15);
  CHECK(compute_tti(net, {{0, 15.0}, {1, 15.0}}).value == 1.0);
  CHECK(compute_tti(net, {{0, 7.5}}).value == 2.0);
  // Term by term: (500/15*1 + 500/7.5*2) / (500/15*1 + 500/15*2).
  const double num = 500.0 / 15.0 * 1.0 + 500.0 / 7.5 * 2.0;
  const double den = 500.0 / 15.0 * 1.0 + 500.0 / 15.0 * 2.0;
  CHECK(compute_tti(net, {{0, 15.0}, {1, 7.5}}).value == doctest::Approx(num / den).epsilon(1e-14));
  CHECK_THROWS_AS(compute_tti(net, {}), Error);
  CHECK_THROWS_AS(compute_tti(net, {{0, 0.0}}), Error);
  CHECK_THROWS_AS(compute_tti(net, {{7, 3.0}}), Error);
}

TEST_CASE("traffic index properties") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> w(0.1, 5), v(3, 30), f(0.05, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto net = two_segments(w(rng), w(rng), v(rng), v(rng));
    const double a = net.segment(0).free_flow_speed, b = net.segment(1).free_flow_speed;
    CHECK(compute_tti(net, {{0, a}, {1, b}}).value == doctest::Approx(1.0).epsilon(1e-15));
    const double sa = a * f(rng), sb = b * f(rng);
    const double base = compute_tti(net, {{0, sa}, {1, sb}}).value;
    CHECK(base >= 1.0);
    CHECK(compute_tti(net, {{0, sa * 0.9}, {1, sb}}).value >= base);
  }
}

TEST_CASE("grid network shape") {
  const auto net = RoadNetwork::grid(1000, 250, 12);
  CHECK(net.intersections().size() == 25);
  CHECK(net.segments().size() == 40);
  CHECK(net.intersection(12).segments.size() == 4);
  CHECK(net.intersection(0).segments.size() == 2);
  CHECK_THROWS_AS(RoadNetwork::grid(1000, 300, 12), Error);
  const auto p = net.project({130, 4});
  CHECK(p.distance == doctest::Approx(4.0));
  CHECK(p.fraction == doctest::Approx(130.0 / 250.0));
}

TEST_CASE("network text round trip") {
  const auto net = RoadNetwork::grid(500, 250, 13.5);
  std::stringstream text;
  net.save(text);
  const auto back = RoadNetwork::parse(text);
  CHECK(back.segments().size() == net.segments().size());
  std::stringstream again;
  back.save(again);
  std::stringstream first;
  net.save(first);
  CHECK(again.str() == first.str());
}

TEST_CASE("free vehicle approaches its desired speed monotonically") {
  MobilityConfig c;
  c.signals = false;
  LaneMotion m;
  m.segment = 0;
  m.offset = 10;
  m.desired_speed = 20;
  CarFollowingMobility mob(grid(2000, 2000), c, {m}, 1);
  double last = 0.0;
  for (int i = 0; i < 30; ++i) {
    mob.step(0.5);
    const double s = mob.state(0).speed.norm();
    CHECK(s >= last - 1e-12);
    CHECK(s <= 20.0 + 1e-12);
    last = s;
  }
  CHECK(last == doctest::Approx(20.0));
}

TEST_CASE("follower stops behind a stopped leader") {
  MobilityConfig c;
  c.signals = false;
  LaneMotion leader, follower;
  leader.id = 0;
  leader.offset = 500;
  leader.desired_speed = 0;
  follower.id = 1;
  follower.offset = 490;
  follower.speed = 10;
  follower.desired_speed = 20;
  CarFollowingMobility mob(grid(2000, 2000), c, {leader, follower}, 1);
  for (int i = 0; i < 40; ++i) {
    mob.step(0.5);
    CHECK(mob.motion(0).offset - mob.motion(1).offset >= c.vehicle_length);
  }
  CHECK(mob.state(1).speed.norm() < 1e-9);
}

TEST_CASE("red light holds a vehicle at the stop line") {
  MobilityConfig c;
  const auto net = grid(500, 250);
  LaneMotion m;
  m.segment = find_segment(*net, 1, 4);  // northbound into the centre node
  m.offset = 250;  // at the stop line
  m.desired_speed = 15;
  CarFollowingMobility mob(net, c, {m}, 1);
  CHECK_FALSE(mob.green_for(m.segment, true));
  const Vec2 start = mob.state(0).position;
  for (int i = 0; i < 29; ++i) {
    mob.step(1.0);
    CHECK(mob.state(0).position == start);
  }
  for (int i = 0; i < 4; ++i) mob.step(1.0);
  CHECK(mob.state(0).position != start);
}

TEST_CASE("random fleets keep lane gaps and stay on the map") {
  for (std::uint64_t seed : {1, 2, 3}) {
    MobilityConfig c;
    const auto net = grid(1000, 250);
    CarFollowingMobility mob(net, c, 200, seed);
    const double spacing = c.vehicle_length + c.min_gap;
    for (int t = 0; t < 150; ++t) {
      mob.step(1.0);
      std::map<std::tuple<SegmentId, bool, int>, std::vector<double>> lanes;
      for (VehicleId v = 0; v < mob.vehicle_count(); ++v) {
        const auto& m = mob.motion(v);
        lanes[{m.segment, m.forward, m.lane}].push_back(m.offset);
        const auto s = mob.state(v);
        CHECK(s.speed.norm() <= c.max_speed + 1e-9);
        CHECK(s.position.x >= -1e-9);
        CHECK(s.position.x <= 1000 + 1e-9);
        CHECK(s.position.y >= -1e-9);
        CHECK(s.position.y <= 1000 + 1e-9);
      }
      for (auto& [key, offsets] : lanes) {
        std::sort(offsets.begin(), offsets.end());
        for (std::size_t i = 1; i < offsets.size(); ++i) REQUIRE(offsets[i] - offsets[i - 1] >= spacing - 1e-9);
      }
    }
  }
}

TEST_CASE("mobility is deterministic per seed") {
  const auto net = grid(1000, 250);
  CarFollowingMobility a(net, {}, 50, 9), b(net, {}, 50, 9);
  for (int t = 0; t < 60; ++t) {
    a.step(1.0);
    b.step(1.0);
  }
  for (VehicleId v = 0; v < 50; ++v) CHECK(a.state(v).position == b.state(v).position);
}

TEST_CASE("trace loading") {
  const auto net = RoadNetwork::grid(1000, 250, 15);
  SUBCASE("empty input") {
    std::istringstream empty("");
    CHECK(parse_trace(empty, net).empty());
    std::istringstream header("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n");
    CHECK(parse_trace(header, net).empty());
  }
  SUBCASE("decreasing timestamps") {
    std::istringstream in("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n1,5,0,0,1\n1,4,10,0,1\n");
    try {
      parse_trace(in, net);
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ParseError);
    }
  }
  SUBCASE("off the map") {
    std::istringstream in("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n1,0,100,100,1\n");
    try {
      parse_trace(in, net);
      FAIL("expected OffMapError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::OffMapError);
    }
  }
  SUBCASE("three rows round trip") {
    const std::string text = "vehicle_id,timestamp_s,x_m,y_m,speed_mps\n7,0,0,0,10\n7,1,10,0,10\n7,2,20,0,10\n";
    std::istringstream in(text);
    const auto tracks = parse_trace(in, net);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks.at(7).size() == 3);
    CHECK(tracks.at(7)[2].position == Vec2{20, 0});
    std::ostringstream out;
    write_trace(out, tracks);
    CHECK(out.str() == text);
  }
  SUBCASE("resampling") {
    std::istringstream in("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n1,0,0,0,10\n1,3,30,0,10\n");
    TraceOptions options;
    options.resample_interval = 1.0;
    const auto tracks = parse_trace(in, net, options);
    REQUIRE(tracks.at(1).size() == 4);
    CHECK(tracks.at(1)[1].position.x == doctest::Approx(10.0));
  }
  SUBCASE("malformed row") {
    std::istringstream in("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n1,0,zero,0,10\n");
    CHECK_THROWS_AS(parse_trace(in, net), Error);
  }
}

TEST_CASE("trace replay interpolates between samples") {
  const auto net = std::make_shared<RoadNetwork>(RoadNetwork::grid(1000, 250, 15));
  std::istringstream in("vehicle_id,timestamp_s,x_m,y_m,speed_mps\n3,0,0,0,10\n3,2,20,0,10\n");
  TraceMobility mob(net, parse_trace(in, *net));
  CHECK(mob.vehicle_count() == 1);
  CHECK(mob.source_id(0) == 3);
  mob.step(1.0);
  CHECK(mob.state(0).position.x == doctest::Approx(10.0));
  mob.step(5.0);
  CHECK(mob.state(0).position.x == doctest::Approx(20.0));
}
