#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "rcms/engine.hpp"
#include "rcms/protocol.hpp"

using namespace rcms;

namespace {

struct Scene {
  std::unique_ptr<World> world;
  RcmsProtocol* protocol = nullptr;
  KinematicMobility* mobility = nullptr;

  const VehicleProtocolState& at(VehicleId v) const { return protocol->vehicle(v); }

  std::size_t count(EventKind kind, std::optional<VehicleId> vehicle = {}, std::string_view detail = {}) const {
    return std::count_if(world->log().events().begin(), world->log().events().end(), [&](const LogEvent& e) {
      return e.kind == kind && (!vehicle || e.vehicle == vehicle) && (detail.empty() || e.detail == detail);
    });
  }
};

/// Constant-velocity fleet in smooth traffic with loss-free short links.
Scene scene(std::vector<KinematicMobility::Vehicle> vehicles, ProtocolConfig config = {}, std::uint64_t seed = 1) {
  WorldConfig wc;
  wc.fixed_tti = 1.0;
  wc.seed = seed;
  wc.radio.rng_seed = seed;
  wc.validate_each_tick = true;
  auto mobility = std::make_unique<KinematicMobility>(std::move(vehicles));
  auto protocol = std::make_unique<RcmsProtocol>(config, 0.0);
  Scene s;
  s.mobility = mobility.get();
  s.protocol = protocol.get();
  s.world = std::make_unique<World>(wc, std::move(mobility), std::move(protocol));
  return s;
}

const Vec2 kEast{10, 0};

}  // namespace

TEST_CASE("a vehicle joins the only core in range") {
  auto s = scene({{{0, 0}, kEast}, {{60, 0}, kEast}});
  const RegionId r = s.protocol->promote(*s.world, 0);
  s.world->run_until(5.0);
  CHECK(s.at(1).role == VehicleRole::Ordinary);
  CHECK(s.at(1).core_id == 0);
  CHECK(s.at(1).region_id == r);
  CHECK(s.protocol->regions().at(r).member_ids == std::set<VehicleId>{0, 1});
  CHECK(s.count(EventKind::Join, 1, "0") == 1);
  CHECK(s.count(EventKind::StaleAgreement) == 0);
  CHECK(s.world->violations().empty());
}

TEST_CASE("a vehicle that hears no core promotes itself after the retries") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto s = scene({{{0, 0}, kEast}}, {}, seed);
    // Start jitter in [0, 2), four silent 2 s rounds, then a backoff in [0, 2).
    s.world->run_until(7.99);
    CHECK(s.protocol->regions().empty());
    CHECK(s.at(0).role == VehicleRole::Unattached);
    s.world->run_until(12.0);
    REQUIRE(s.protocol->regions().size() == 1);
    CHECK(s.at(0).role == VehicleRole::Core);
    CHECK(s.count(EventKind::RegionCreate, 0, "self") == 1);
    CHECK(s.count(EventKind::Construct, 0, "initial") == 1);
  }
}

TEST_CASE("with two cores in range the higher cooperative threshold wins") {
  // Cores 260 m apart never hear each other; the joining vehicle sits between them.
  ProtocolConfig config;
  config.distance_scale = 1.0 / 50.0;
  config.speed_scale = 1.0 / 10.0;
  const double fast = 15.0 + 0.223 * 500.0 / 130.0;  // τ = 0.8 at 130 m
  const double slow = 15.0 - 1.204 * 500.0 / 130.0;  // τ = 0.3 at 130 m
  const ThresholdScaling scaling = ThresholdScaling::from(config);
  auto tau = [&](Vec2 core_pos, double core_speed) {
    VehicleState o, c;
    o.position = {0, 0};
    o.speed = {15, 0};
    c.position = core_pos;
    c.speed = {core_speed, 0};
    return cooperative_threshold(o, c, TrafficIndex{1.0, 0.0}, 1.0, scaling);
  };

  SUBCASE("better core ahead") {
    CHECK(tau({130, 0}, fast) == doctest::Approx(0.8).epsilon(0.01));
    CHECK(tau({-130, 0}, slow) == doctest::Approx(0.3).epsilon(0.01));
    auto s = scene({{{130, 0}, {fast, 0}}, {{-130, 0}, {slow, 0}}, {{0, 0}, {15, 0}}}, config);
    s.protocol->promote(*s.world, 0);
    s.protocol->promote(*s.world, 1);
    s.world->run_until(6.0);
    CHECK(s.at(2).core_id == 0);
    CHECK(s.at(2).role == VehicleRole::Gateway);
    CHECK(s.protocol->regions().at(*s.at(2).region_id).gateway_ids.count(2) == 1);
  }
  SUBCASE("better core behind") {
    auto s = scene({{{130, 0}, {30.0 - slow, 0}}, {{-130, 0}, {fast, 0}}, {{0, 0}, {15, 0}}}, config);
    CHECK(tau({130, 0}, 30.0 - slow) == doctest::Approx(0.3).epsilon(0.01));
    CHECK(tau({-130, 0}, fast) == doctest::Approx(0.8).epsilon(0.01));
    s.protocol->promote(*s.world, 0);
    s.protocol->promote(*s.world, 1);
    s.world->run_until(6.0);
    CHECK(s.at(2).core_id == 1);
    CHECK(s.at(2).role == VehicleRole::Gateway);
  }
}

TEST_CASE("core replacement needs more than half of the members gone") {
  std::vector<KinematicMobility::Vehicle> fleet{{{0, 0}, kEast}};
  for (int i = 0; i < 10; ++i) {
    const double a = 2.0 * 3.141592653589793 * i / 10.0;
    fleet.push_back({{80.0 * std::cos(a), 80.0 * std::sin(a)}, kEast});
  }
  auto evict = [](Scene& s, std::vector<VehicleId> who) {
    for (VehicleId v : who) s.mobility->set_position(v, {s.world->state(v).position.x, 5000.0 + 10.0 * v});
  };

  SUBCASE("one of ten") {
    auto s = scene(fleet);
    const RegionId r = s.protocol->promote(*s.world, 0);
    s.world->run_until(6.5);
    REQUIRE(s.protocol->regions().at(r).member_ids.size() == 11);
    evict(s, {3});
    s.world->run_until(20.0);
    CHECK(s.count(EventKind::Replace) == 0);
    CHECK(s.protocol->regions().at(r).core_id == 0);
    CHECK(s.protocol->regions().at(r).member_ids.count(3) == 0);
  }
  SUBCASE("six of ten") {
    auto s = scene(fleet);
    const RegionId r = s.protocol->promote(*s.world, 0);
    s.world->run_until(6.5);
    REQUIRE(s.protocol->regions().at(r).member_ids.size() == 11);
    evict(s, {1, 2, 3, 4, 5, 6});
    s.world->run_until(12.0);
    REQUIRE(s.count(EventKind::Replace) == 1);
    const VehicleId core = s.protocol->regions().at(r).core_id;
    CHECK(core >= 7);
    CHECK(s.at(core).role == VehicleRole::Core);
    CHECK(s.at(0).region_id != r);
    for (VehicleId v = 7; v <= 10; ++v) CHECK(s.at(v).region_id == r);
    // The survivor closest to the others' centre wins.
    double best = 1e9;
    VehicleId expected = 0;
    for (VehicleId c = 7; c <= 10; ++c) {
      double sum = 0;
      for (VehicleId o = 7; o <= 10; ++o) sum += (s.world->state(c).position - s.world->state(o).position).norm();
      if (sum < best - 1e-9) {
        best = sum;
        expected = c;
      }
    }
    CHECK(core == expected);
    CHECK(s.world->violations().empty());
  }
}

TEST_CASE("a core that turns around loses its region") {
  std::vector<KinematicMobility::Vehicle> fleet{{{0, 0}, kEast}};
  for (int i = 1; i <= 4; ++i) fleet.push_back({{-25.0 * i, 10.0}, kEast});
  auto s = scene(fleet);
  const RegionId r = s.protocol->promote(*s.world, 0);
  s.world->run_until(6.5);
  REQUIRE(s.protocol->regions().at(r).member_ids.size() == 5);
  s.mobility->set_velocity(0, {-10, 0});
  double t = 6.5;
  while (s.protocol->regions().count(r) && t < 60.0) s.world->run_until(t += 1.0);
  REQUIRE(s.protocol->regions().count(r) == 0);
  for (VehicleId v = 0; v <= 4; ++v) {
    CHECK(s.at(v).role == VehicleRole::Unattached);
    CHECK(s.count(EventKind::Construct, v, "re") == 1);
  }
  CHECK(s.count(EventKind::RegionEnd, 0, "dissolve") == 1);
  CHECK(s.count(EventKind::Replace) == 0);
  CHECK(s.world->violations().empty());
}

namespace {

/// Core A (id 0) with three vehicles between it and where core B (id 1)
/// will be placed; B brings its own member (id 5). B's pair starts far away.
struct TwoRegions {
  Scene s;
  RegionId a = 0, b = 0;
  double gap = 0;

  explicit TwoRegions(double core_gap, ProtocolConfig config = {}) : gap(core_gap) {
    s = scene({{{0, 0}, kEast},
               {{gap, 3000}, kEast},
               {{gap / 2, 40}, kEast},
               {{gap / 2, -40}, kEast},
               {{gap / 2 - 10, 0}, kEast},
               {{gap + 140, 3000}, kEast}},
              config);
    a = s.protocol->promote(*s.world, 0);
    b = s.protocol->promote(*s.world, 1);
  }

  void place_b(bool near) {
    const double x = s.world->state(0).position.x + gap;
    const double y = near ? 0.0 : 3000.0;
    s.mobility->set_position(1, {x, y});
    s.mobility->set_position(5, {x + 140, y});
  }
};

}  // namespace

TEST_CASE("aggregation merges regions after two overlapping periods") {
  ProtocolConfig config;
  config.zeta = 5.0;
  TwoRegions t(124.0, config);
  t.s.world->run_until(15.0);
  CHECK(t.s.at(2).region_id == t.a);
  CHECK(t.s.at(5).region_id == t.b);
  CHECK(t.s.at(2).role == VehicleRole::Ordinary);

  // φ_agg with τ = 1 for both cores: mean of e^{-η/250} over the two core distances.
  auto phi = [](Vec2 g, double gap) {
    return (std::exp(-(g - Vec2{0, 0}).norm() / 250.0) + std::exp(-(g - Vec2{gap, 0}).norm() / 250.0)) / 2.0;
  };
  CHECK(phi({52, 0}, 124) > phi({62, 40}, 124));

  t.place_b(true);
  t.s.world->run_until(21.0);
  CHECK(t.s.at(2).role == VehicleRole::Gateway);
  CHECK(t.s.protocol->merges().empty());  // one period seen so far
  t.s.world->run_until(26.0);
  REQUIRE(t.s.protocol->merges().size() == 1);
  const auto& m = t.s.protocol->merges().front();
  CHECK(m.consecutive_periods == 2);
  CHECK(m.new_core == 4);
  const auto& region = t.s.protocol->regions().at(m.merged);
  CHECK(region.member_ids == std::set<VehicleId>{0, 1, 2, 3, 4, 5});
  CHECK(region.core_id == 4);
  for (VehicleId former : {0, 1}) {
    CHECK(t.s.at(former).role != VehicleRole::Core);
    CHECK(t.s.at(former).candidate_core);
    CHECK(t.s.at(former).core_id == 4);
  }
  CHECK(t.s.protocol->regions().count(t.a) == 0);
  CHECK(t.s.protocol->regions().count(t.b) == 0);
  CHECK(t.s.count(EventKind::RegionEnd, std::nullopt, "merge") == 2);
  CHECK(t.s.world->violations().empty());
}

TEST_CASE("aggregation ignores isolated overlapping periods") {
  ProtocolConfig config;
  config.zeta = 5.0;
  TwoRegions t(124.0, config);
  t.s.world->run_until(16.0);
  // Near for the checks at 20 and 30, away for 25 and 35.
  for (int k = 0; k < 4; ++k) {
    t.place_b(k % 2 == 0);
    t.s.world->run_until(20.5 + 5.0 * k);
  }
  CHECK(t.s.protocol->merges().empty());
  CHECK(t.s.at(2).region_id == t.a);
  CHECK(t.s.world->violations().empty());

  // Staying near for two periods then merges (positive control).
  t.place_b(true);
  t.s.world->run_until(46.0);
  CHECK(t.s.protocol->merges().size() == 1);
}

TEST_CASE("aggregation only follows two overlapping periods in a row") {
  ProtocolConfig config;
  config.zeta = 5.0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    CAPTURE(seed);
    TwoRegions t(124.0, config);
    t.s.world->run_until(16.0);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<bool> near;  // B's placement at the check at 20 + 5k
    for (int k = 0; k < 8 && t.s.protocol->merges().empty(); ++k) {
      near.push_back(coin(rng));
      t.place_b(near.back());
      t.s.world->run_until(20.5 + 5.0 * k);
    }
    if (t.s.protocol->merges().empty()) {
      for (std::size_t k = 1; k < near.size(); ++k) CHECK_FALSE((near[k] && near[k - 1]));
      continue;
    }
    const auto k = static_cast<std::size_t>(std::lround((t.s.protocol->merges().front().time - 20.0) / 5.0));
    REQUIRE(k >= 1);
    REQUIRE(k < near.size());
    CHECK(near[k]);
    CHECK(near[k - 1]);
    for (std::size_t j = 1; j < k; ++j) CHECK_FALSE((near[j] && near[j - 1]));
  }
}

TEST_CASE("aggregation needs the cores within half the range") {
  ProtocolConfig config;
  config.zeta = 5.0;
  TwoRegions t(126.0, config);
  t.s.world->run_until(16.0);
  t.place_b(true);
  t.s.world->run_until(60.0);
  CHECK(t.s.at(2).role == VehicleRole::Gateway);
  CHECK(t.s.protocol->merges().empty());
  CHECK(t.s.protocol->regions().count(t.a) == 1);
  CHECK(t.s.protocol->regions().count(t.b) == 1);
}

TEST_CASE("decomposition at an intersection") {
  // Member 1 trails core 0 by `gap` metres.
  auto make = [](double gap, double member_speed, ProtocolConfig config = {}) {
    auto s = scene({{{gap, 0}, {18, 0}}, {{0, 0}, {member_speed, 0}}}, config);
    s.protocol->promote(*s.world, 0);
    return s;
  };

  SUBCASE("turning away from the core leaves") {
    auto s = make(20, 18);
    s.world->run_until(5.0);
    REQUIRE(s.at(1).core_id == 0);
    s.mobility->set_approach(1, 40, {0, 1}, 7);
    s.world->run_until(6.0);
    CHECK(s.at(1).role == VehicleRole::Unattached);
    CHECK(s.count(EventKind::Leave, 1, "turn") == 1);
  }
  SUBCASE("following the core's turn stays") {
    auto s = make(0.5, 18);
    s.world->run_until(5.0);
    s.mobility->set_approach(0, 40, {0, 1}, 7);
    s.world->run_until(6.0);
    s.mobility->set_approach(1, 40, {0, 1}, 7);
    s.world->run_until(8.0);
    CHECK(s.at(1).core_id == 0);
    CHECK(s.count(EventKind::Leave, 1) == 0);
  }
  // The member drops to 200 m behind the core's last beacon position at 8 m/s
  // slower: φ_dec = (1 - e^-0.8) / (1 + e^-(8/30)) = 0.3118 with the default scaling.
  const double phi = (1.0 - std::exp(-0.8)) / (1.0 + std::exp(-8.0 / 30.0));
  CHECK(phi == doctest::Approx(0.3118).epsilon(1e-3));
  for (const auto& [threshold, leaves] : {std::pair{0.5, false}, std::pair{0.313, false}, std::pair{0.311, true}}) {
    CAPTURE(threshold);
    ProtocolConfig config;
    config.decomposition_threshold = threshold;
    auto s = make(20, 18, config);
    s.world->run_until(5.0);
    REQUIRE(s.at(1).core_id == 0);
    const double core_x = s.world->state(0).position.x;  // carried by the beacon sent at t = 5
    s.mobility->set_position(1, {core_x - 210.0, 0});
    s.mobility->set_velocity(1, {10, 0});
    s.mobility->set_approach(1, 40, {1, 0}, 7);
    s.world->run_until(6.0);
    CHECK(s.count(EventKind::Leave, 1, "divergence") == (leaves ? 1 : 0));
  }
}
