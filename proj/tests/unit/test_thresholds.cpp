#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "rcms/thresholds.hpp"
#include "support.hpp"

using namespace rcms;
using rcms::test::make_state;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("cooperative threshold examples") {
  CHECK(cooperative_threshold(0.0, 25.0, 1.2, 1.0) == 1.0);
  CHECK(cooperative_threshold(3.0, 0.0, 1.2, 1.0) == 1.0);
  CHECK(cooperative_threshold(0.0, 0.0, 2.0, 0.5) == 0.5);
  CHECK(rel(cooperative_threshold(0.1, 10.0, 1.2, 1.0), std::exp(-1.0)) <= 1e-12);
  // 1.5 itself is still smooth traffic; free flow uses the smooth branch too.
  CHECK(cooperative_threshold(0.0, 0.0, 1.5, 0.5) == 1.0);
  CHECK(cooperative_threshold(0.0, 0.0, 0.8, 0.5) == 1.0);
  CHECK(cooperative_threshold(0.0, 0.0, 1.5000001, 0.5) == 0.5);
}

TEST_CASE("cooperative threshold on states applies the unit scaling") {
  const auto ordinary = make_state(0, {0, 0}, {13, 0});
  const auto core = make_state(1, {30, 40}, {10, 4});
  const ThresholdScaling s{1.0 / 250.0, 1.0 / 30.0};
  const double expected = 0.7 * std::exp(-(5.0 / 30.0) * (50.0 / 250.0));
  CHECK(rel(cooperative_threshold(ordinary, core, {2.0, 0.0}, 0.7, s), expected) <= 1e-12);
  CHECK(rel(cooperative_threshold(ordinary, core, {1.0, 0.0}, 0.7, ThresholdScaling::unit()), std::exp(-250.0)) <=
        1e-12);
}

TEST_CASE("cooperative threshold properties") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0), lam(0.01, 1.0), tti(0.5, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double s = u(rng), d = u(rng), l = lam(rng), t = tti(rng);
    const double v = cooperative_threshold(s, d, t, l);
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
    CHECK(cooperative_threshold(s, d, 2.0, l) <= cooperative_threshold(s, d, 1.2, l));
    CHECK(cooperative_threshold(s * 1.1, d, t, l) <= v);
  }
  // A common factor on λ never changes the congested-branch argmax.
  std::vector<std::pair<double, double>> cand(6);
  for (auto& c : cand) c = {u(rng), lam(rng)};
  auto argmax = [&](double scale) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cand.size(); ++k)
      if (cooperative_threshold(cand[k].first, 1.0, 2.0, cand[k].second * scale) >
          cooperative_threshold(cand[best].first, 1.0, 2.0, cand[best].second * scale))
        best = k;
    return best;
  };
  CHECK(argmax(1.0) == argmax(0.37));
}

TEST_CASE("competitive threshold examples") {
  const auto c = make_state(0, {5, 5}, {});
  const std::vector<VehicleState> colocated{make_state(1, {5, 5}, {}), make_state(2, {5, 5}, {})};
  CHECK(competitive_threshold(c, colocated, 0.8) == 0.0);
  const std::vector<VehicleState> two{make_state(1, {15, 5}, {}), make_state(2, {5, 35}, {})};
  CHECK(competitive_threshold(c, two, 1.0) == 20.0);
  CHECK_THROWS_AS(competitive_threshold(c, {}, 1.0), Error);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-200, 200);
  for (int i = 0; i < 20; ++i) {
    const auto cand = make_state(0, {u(rng), u(rng)}, {});
    std::vector<VehicleState> m;
    long double sum = 0;
    for (VehicleId k = 1; k <= 4; ++k) {
      m.push_back(make_state(k, {u(rng), u(rng)}, {}));
      const long double dx = m.back().position.x - cand.position.x, dy = m.back().position.y - cand.position.y;
      sum += std::sqrt(dx * dx + dy * dy);
    }
    CHECK(rel(competitive_threshold(cand, m, 0.6), static_cast<double>(0.6L * sum / 4)) <= 1e-12);
  }
}

TEST_CASE("replacement score modes") {
  const std::vector<VehicleState> members{make_state(1, {0, 0}, {}), make_state(2, {100, 0}, {})};
  const auto centre = make_state(3, {50, 0}, {});
  const auto edge = make_state(4, {150, 0}, {});
  const ThresholdScaling s;
  CHECK(replacement_score(centre, members, 1.0, ReplacementMode::Centered, s) >
        replacement_score(edge, members, 1.0, ReplacementMode::Centered, s));
  CHECK(replacement_score(edge, members, 1.0, ReplacementMode::Verbatim, s) >
        replacement_score(centre, members, 1.0, ReplacementMode::Verbatim, s));
  CHECK(rel(replacement_score(centre, members, 0.5, ReplacementMode::Centered, s), 0.5 * std::exp(-50.0 / 250.0)) <=
        1e-12);
}

TEST_CASE("aggregation threshold examples") {
  const std::vector<std::pair<double, double>> zero{{0.0, 0.4}, {0.0, 0.9}};
  CHECK(aggregation_threshold(zero) == 1.0);
  const std::vector<std::pair<double, double>> far{{0.0, 0.5}, {800.0, 0.5}};
  CHECK(aggregation_threshold(far) == doctest::Approx(0.5).epsilon(1e-15));
  const std::vector<std::pair<double, double>> one{{0.3, 1.0}};
  CHECK_THROWS_AS(aggregation_threshold(one), Error);
  const std::vector<std::pair<double, double>> bad{{0.3, 1.0}, {0.1, 0.0}};
  CHECK_THROWS_AS(aggregation_threshold(bad), Error);

  // 3 cores at 50/100/150 m with 1/250 m scaling.
  const auto g = make_state(0, {0, 0}, {});
  const std::vector<std::pair<VehicleState, double>> cores{
      {make_state(1, {50, 0}, {}), 0.9}, {make_state(2, {0, 100}, {}), 0.5}, {make_state(3, {-150, 0}, {}), 0.2}};
  const double expected = (std::exp(-0.2) * 0.9 + std::exp(-0.4) * 0.5 + std::exp(-0.6) * 0.2) / 1.6;
  CHECK(rel(aggregation_threshold(g, cores, ThresholdScaling{}), expected) <= 1e-12);
}

TEST_CASE("aggregation threshold is a convex combination") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> eta(0, 4), tau(0.01, 1);
  std::uniform_int_distribution<int> n(2, 6);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::pair<double, double>> terms(n(rng));
    double lo = 1, hi = 0;
    for (auto& t : terms) {
      t = {eta(rng), tau(rng)};
      lo = std::min(lo, std::exp(-t.first));
      hi = std::max(hi, std::exp(-t.first));
    }
    const double v = aggregation_threshold(terms);
    CHECK(v >= lo - 1e-15);
    CHECK(v <= hi + 1e-15);
  }
}

TEST_CASE("decomposition value examples and range") {
  CHECK(decomposition_value(0.0, 5.0) == 0.0);
  CHECK(rel(decomposition_value(1.0, 0.0), (1.0 - std::exp(-1.0)) / 2.0) <= 1e-12);
  CHECK(decomposition_value(1e6, 1e6) == doctest::Approx(1.0));
  CHECK(decomposition_value(1e6, 1e6) <= 1.0);
  // 200 m behind at 8 m/s, default scaling: (1 - e^-0.8) / (1 + e^-(8/30)).
  const auto core = make_state(0, {200, 0}, {18, 0});
  const auto member = make_state(1, {0, 0}, {10, 0});
  const double v = decomposition_value(core, member, ThresholdScaling{});
  CHECK(rel(v, (1.0 - std::exp(-0.8)) / (1.0 + std::exp(-8.0 / 30.0))) <= 1e-12);
  CHECK(v < 0.5);  // stays with the default threshold

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int i = 0; i < 2000; ++i) {
    const double d = u(rng), s = u(rng);
    const double x = decomposition_value(d, s);
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(decomposition_value(std::abs(d) + 0.5, s) >= x);
    CHECK(decomposition_value(d, std::abs(s) + 0.5) >= x);
  }
}
