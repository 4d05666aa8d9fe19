#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "rcms/srp/model.hpp"
#include "support.hpp"

using namespace rcms;
using namespace rcms::srp;
using rcms::test::random_matrix;
using rcms::test::random_vector;

namespace {

// Straight-line evaluation of the gate equations, one component at a time.
VectorXd gru_reference(const GruCell& c, const VectorXd& x, const VectorXd& h) {
  const auto H = c.hidden_size();
  const auto D = c.input_size();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  VectorXd z(H), r(H), out(H);
  for (Eigen::Index i = 0; i < H; ++i) {
    double az = c.b_z[i], ar = c.b_r[i];
    for (Eigen::Index k = 0; k < D; ++k) az += c.W_z(i, k) * x[k], ar += c.W_r(i, k) * x[k];
    for (Eigen::Index k = 0; k < H; ++k) az += c.U_z(i, k) * h[k], ar += c.U_r(i, k) * h[k];
    z[i] = sig(az);
    r[i] = sig(ar);
  }
  for (Eigen::Index i = 0; i < H; ++i) {
    double a = c.b_h[i];
    for (Eigen::Index k = 0; k < D; ++k) a += c.W_h(i, k) * x[k];
    for (Eigen::Index k = 0; k < H; ++k) a += c.U_h(i, k) * r[k] * h[k];
    out[i] = z[i] * h[i] + (1.0 - z[i]) * std::tanh(a);
  }
  return out;
}

// Every monotone path from (0,0) to (n-1,m-1), visited recursively.
void enumerate_paths(int n, int m, const std::function<void(const std::vector<std::pair<int, int>>&)>& visit) {
  std::vector<std::pair<int, int>> path{{0, 0}};
  std::function<void()> rec = [&] {
    const auto [i, j] = path.back();
    if (i == n - 1 && j == m - 1) {
      visit(path);
      return;
    }
    const std::pair<int, int> moves[3] = {{1, 1}, {1, 0}, {0, 1}};
    for (const auto& [di, dj] : moves) {
      if (i + di >= n || j + dj >= m) continue;
      path.emplace_back(i + di, j + dj);
      rec();
      path.pop_back();
    }
  };
  rec();
}

double brute_dtw(const Sequence& a, const Sequence& b) {
  const auto cost = pairwise_sq_cost(a, b);
  double best = std::numeric_limits<double>::infinity();
  enumerate_paths(static_cast<int>(a.rows()), static_cast<int>(b.rows()), [&](const auto& p) {
    double s = 0;
    for (const auto& [i, j] : p) s += cost(i, j);
    best = std::min(best, std::sqrt(s) / static_cast<double>(p.size()));
  });
  return best;
}

double brute_soft_dtw(const Sequence& a, const Sequence& b, double gamma) {
  const auto cost = pairwise_sq_cost(a, b);
  std::vector<double> totals;
  enumerate_paths(static_cast<int>(a.rows()), static_cast<int>(b.rows()), [&](const auto& p) {
    double s = 0;
    for (const auto& [i, j] : p) s += cost(i, j);
    totals.push_back(s);
  });
  const double lo = *std::min_element(totals.begin(), totals.end());
  double sum = 0;
  for (double t : totals) sum += std::exp(-(t - lo) / gamma);
  return lo - gamma * std::log(sum);
}

GruCell random_cell(std::mt19937_64& rng, int H, int D, double scale = 0.8) {
  return GruCell::random(H, D, rng, scale);
}

SrpModel small_model(std::uint64_t seed, int H = 4, int L = 3, int n = 2, LossKind loss = LossKind::SoftDtw) {
  SrpConfig cfg;
  cfg.hidden = H;
  cfg.sequence_length = L;
  cfg.horizon = n;
  cfg.loss = loss;
  cfg.init_scale = 0.6;
  return SrpModel::random(cfg, seed);
}

Trajectory straight_trajectory(VehicleId id, Vec2 start, Vec2 vel, int samples, double accel = 0.0) {
  Trajectory t(id, static_cast<std::size_t>(samples));
  Vec2 p = start;
  Vec2 v = vel;
  for (int k = 0; k < samples; ++k) {
    VehicleState s = rcms::test::make_state(id, p, v, k);
    s.acceleration = v.norm() > 0 ? v * (accel / v.norm()) : Vec2{};
    s.segment_fraction = std::fmod(k * 0.05, 1.0);
    s.tti = 1.2;
    t.append(s);
    p = p + v;
    if (v.norm() > 0) v = v * ((v.norm() + accel) / v.norm());
  }
  return t;
}

}  // namespace

TEST_SUITE("gru") {
  TEST_CASE("zero parameters and zero state give zero output with half-open gates") {
    const GruCell c = GruCell::zeros(3, 2);
    GruStepCache cache;
    const VectorXd h = gru_step(c, VectorXd::Zero(2), VectorXd::Zero(3), &cache);
    CHECK(h.isZero());
    CHECK(cache.z.isApprox(VectorXd::Constant(3, 0.5)));
    CHECK(cache.r.isApprox(VectorXd::Constant(3, 0.5)));
    CHECK(cache.h_tilde.isZero());
  }

  TEST_CASE("saturated update gate copies the previous state") {
    std::mt19937_64 rng(3);
    GruCell c = random_cell(rng, 3, 2);
    c.b_z.setConstant(60.0);
    const VectorXd h_prev = random_vector(rng, 3);
    const VectorXd h = gru_step(c, random_vector(rng, 2), h_prev);
    CHECK((h - h_prev).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("matches a component-wise re-implementation") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const GruCell c = random_cell(rng, 3, 2);
      const VectorXd x = random_vector(rng, 2);
      const VectorXd h = random_vector(rng, 3);
      CHECK((gru_step(c, x, h) - gru_reference(c, x, h)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("gates stay open-interval and the new state lies between old state and candidate") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const GruCell c = random_cell(rng, 4, 3, 3.0);
      GruStepCache k;
      const VectorXd h_prev = random_vector(rng, 4);
      gru_step(c, random_vector(rng, 3, -5, 5), h_prev, &k);
      CHECK(k.z.minCoeff() > 0.0);
      CHECK(k.z.maxCoeff() < 1.0);
      CHECK(k.r.minCoeff() > 0.0);
      CHECK(k.r.maxCoeff() < 1.0);
      for (Eigen::Index i = 0; i < 4; ++i) {
        const double lo = std::min(h_prev[i], k.h_tilde[i]);
        const double hi = std::max(h_prev[i], k.h_tilde[i]);
        CHECK(k.h[i] >= lo - 1e-15);
        CHECK(k.h[i] <= hi + 1e-15);
      }
    }
  }

  TEST_CASE("shape mismatch is reported") {
    const GruCell c = GruCell::zeros(3, 2);
    CHECK_THROWS_AS(gru_step(c, VectorXd::Zero(3), VectorXd::Zero(3)), Error);
    GruCell bad = c;
    bad.U_r = MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(bad.check_shapes(), Error);
  }
}

TEST_SUITE("encoder-decoder") {
  TEST_CASE("single-step encode is one gru_step from zero") {
    const SrpModel m = small_model(1);
    std::mt19937_64 rng(2);
    const Sequence in = random_matrix(rng, 1, kFeatureCount);
    const VectorXd expect = gru_step(m.encoder, in.row(0).transpose(), VectorXd::Zero(m.hidden_size()));
    CHECK(encode(m, in) == expect);
  }

  TEST_CASE("zero model encodes zero inputs to zero and decodes to zero") {
    const SrpModel m = SrpModel::zeros(SrpConfig{});
    CHECK(encode(m, Sequence::Zero(8, kFeatureCount)).isZero());
    CHECK(decode(m, VectorXd::Zero(m.hidden_size()), 4).isZero());
  }

  TEST_CASE("encode equals a manual fold") {
    const SrpModel m = small_model(7);
    std::mt19937_64 rng(8);
    const Sequence in = random_matrix(rng, 4, kFeatureCount);
    VectorXd h = VectorXd::Zero(m.hidden_size());
    h = gru_step(m.encoder, in.row(0).transpose(), h);
    h = gru_step(m.encoder, in.row(1).transpose(), h);
    h = gru_step(m.encoder, in.row(2).transpose(), h);
    h = gru_step(m.encoder, in.row(3).transpose(), h);
    CHECK(encode(m, in) == h);
  }

  TEST_CASE("decode matches manual unrolling") {
    const SrpModel m = small_model(9);
    std::mt19937_64 rng(10);
    const VectorXd h0 = random_vector(rng, m.hidden_size());
    const VectorXd seed = random_vector(rng, kFeatureCount);
    const Sequence out = decode(m, h0, 3, &seed);
    VectorXd x = seed, h = h0;
    for (int l = 0; l < 3; ++l) {
      h = gru_step(m.decoder, x, h);
      x = (m.projection * h + m.projection_bias).cwiseMax(0.0);
      CHECK((out.row(l).transpose() - x).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(out.minCoeff() >= 0.0);

    const Sequence one = decode(m, h0, 1);
    const VectorXd h1 = gru_step(m.decoder, VectorXd::Zero(kFeatureCount), h0);
    CHECK(one.row(0).transpose() == (m.projection * h1 + m.projection_bias).cwiseMax(0.0));
  }

  TEST_CASE("predict rejects windows of the wrong length") {
    const SrpModel m = small_model(1);
    CHECK_THROWS_AS(predict(m, Sequence::Zero(2, kFeatureCount)), Error);
    CHECK_NOTHROW(predict(m, Sequence::Zero(3, kFeatureCount)));
    CHECK_THROWS_AS(decode(m, VectorXd::Zero(m.hidden_size()), 0), Error);
  }
}

TEST_SUITE("dtw") {
  TEST_CASE("identical sequences: zero distance along the diagonal") {
    std::mt19937_64 rng(1);
    const Sequence a = random_matrix(rng, 5, 3);
    const auto r = dtw(a, a);
    CHECK(r.distance == 0.0);
    REQUIRE(r.path.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(r.path.cells[k] == std::pair{k, k});
  }

  TEST_CASE("single samples compare directly") {
    Sequence a(1, 2), b(1, 2);
    a << 1.0, 2.0;
    b << 4.0, 6.0;
    const auto r = dtw(a, b);
    CHECK(r.distance == doctest::Approx(5.0));
    CHECK(r.path.size() == 1);
  }

  TEST_CASE("agrees with exhaustive path enumeration up to length 4") {
    std::mt19937_64 rng(42);
    for (int n = 1; n <= 4; ++n)
      for (int m = 1; m <= 4; ++m)
        for (int trial = 0; trial < 10; ++trial) {
          const Sequence a = random_matrix(rng, n, 2);
          const Sequence b = random_matrix(rng, m, 2);
          const auto r = dtw(a, b);
          CHECK(r.distance == doctest::Approx(brute_dtw(a, b)).epsilon(1e-12));
          CHECK(r.path.valid(n, m));
          double s = 0;
          for (const auto& [i, j] : r.path.cells) s += (a.row(i) - b.row(j)).squaredNorm();
          CHECK(std::sqrt(s) / r.path.size() == doctest::Approx(r.distance).epsilon(1e-12));
          CHECK(dtw(b, a).distance == doctest::Approx(r.distance).epsilon(1e-12));
          if (n == m) CHECK(dtw(a, a).distance == 0.0);
        }
  }

  TEST_CASE("empty or mismatched input") {
    CHECK_THROWS_AS(dtw(Sequence(0, 2), Sequence::Zero(2, 2)), Error);
    CHECK_THROWS_AS(dtw(Sequence::Zero(2, 3), Sequence::Zero(2, 2)), Error);
  }
}

TEST_SUITE("soft-dtw loss") {
  TEST_CASE("soft recursion equals log-sum-exp over enumerated paths") {
    std::mt19937_64 rng(17);
    for (int n = 1; n <= 4; ++n)
      for (int m = 1; m <= 4; ++m) {
        const Sequence a = random_matrix(rng, n, 3);
        const Sequence b = random_matrix(rng, m, 3);
        for (double g : {0.01, 0.1, 1.0})
          CHECK(soft_dtw(a, b, g) == doctest::Approx(brute_soft_dtw(a, b, g)).epsilon(1e-10));
      }
  }

  TEST_CASE("identical constant sequences reach the zero-cost value") {
    std::mt19937_64 rng(4);
    const Sequence a = random_matrix(rng, 1, 5).replicate(4, 1);
    const double g = 0.1;
    CHECK(soft_dtw_loss(a, a, g).value == doctest::Approx(soft_dtw_loss_floor(4, 4, g)).epsilon(1e-12));
    // Non-constant identical sequences only zero the diagonal path, so they sit above the floor.
    const Sequence b = random_matrix(rng, 4, 5);
    CHECK(soft_dtw_loss(b, b, g).value > soft_dtw_loss_floor(4, 4, g));
    CHECK(soft_dtw_loss(b, b, g).value <= 0.0);
    CHECK(count_warping_paths(3, 3) == 13.0);
    CHECK(count_warping_paths(4, 4) == 63.0);
  }

  TEST_CASE("gradient matches central differences on 3x3 sequences") {
    std::mt19937_64 rng(23);
    for (auto kind : {LossKind::SoftDtw, LossKind::LogExpDtw}) {
      for (int trial = 0; trial < 5; ++trial) {
        Sequence a = random_matrix(rng, 3, 3);
        Sequence b = random_matrix(rng, 3, 3);
        const auto r = soft_dtw_loss(a, b, 0.5, kind);
        const double eps = 1e-6;
        for (Eigen::Index i = 0; i < 3; ++i)
          for (Eigen::Index j = 0; j < 3; ++j) {
            for (Sequence* s : {&a, &b}) {
              const double keep = (*s)(i, j);
              (*s)(i, j) = keep + eps;
              const double up = soft_dtw_loss(a, b, 0.5, kind).value;
              (*s)(i, j) = keep - eps;
              const double dn = soft_dtw_loss(a, b, 0.5, kind).value;
              (*s)(i, j) = keep;
              const double fd = (up - dn) / (2 * eps);
              const double an = s == &a ? r.grad_a(i, j) : r.grad_b(i, j);
              CHECK(std::abs(an - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
          }
      }
    }
  }

  TEST_CASE("moving the second sequence halfway toward the first lowers the loss") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const Sequence a = random_matrix(rng, 4, 5);
      const Sequence b = random_matrix(rng, 4, 5);
      const Sequence closer = b + 0.5 * (a - b);
      CHECK(soft_dtw_loss(a, closer, 0.1).value < soft_dtw_loss(a, b, 0.1).value);
    }
  }

  TEST_CASE("soft value approaches the hard alignment cost as gamma shrinks") {
    std::mt19937_64 rng(37);
    const Sequence a = random_matrix(rng, 4, 2);
    const Sequence b = random_matrix(rng, 3, 2);
    const auto cost = pairwise_sq_cost(a, b);
    double hard = std::numeric_limits<double>::infinity();
    enumerate_paths(4, 3, [&](const auto& p) {
      double s = 0;
      for (const auto& [i, j] : p) s += cost(i, j);
      hard = std::min(hard, s);
    });
    CHECK(soft_dtw(a, b, 1e-4) == doctest::Approx(hard).epsilon(1e-3));
  }

  TEST_CASE("invalid gamma") { CHECK_THROWS_AS(soft_dtw_loss(Sequence::Zero(2, 2), Sequence::Zero(2, 2), 0.0), Error); }
}

TEST_SUITE("training") {
  TEST_CASE("parameter flattening round-trips") {
    SrpModel m = small_model(3);
    const VectorXd p = m.parameters();
    CHECK(p.size() == m.parameter_count());
    SrpModel z = SrpModel::zeros(SrpConfig{4, 3, 2, 0.1, LossKind::SoftDtw});
    z.set_parameters(p);
    CHECK(z.parameters() == p);
    CHECK(z.projection == m.projection);
    CHECK(z.decoder.U_h == m.decoder.U_h);
  }

  TEST_CASE("model gradient matches finite differences") {
    for (auto kind : {LossKind::SoftDtw, LossKind::LogExpDtw}) {
      const SrpModel m = small_model(13, 4, 3, 2, kind);
      std::mt19937_64 rng(14);
      std::vector<TrainingPair> data;
      for (int k = 0; k < 3; ++k)
        data.push_back({random_matrix(rng, 3, kFeatureCount), random_matrix(rng, 2, kFeatureCount, 0.0, 1.0)});
      const auto lg = loss_and_gradient(m, data);
      CHECK(lg.loss == doctest::Approx(dataset_loss(m, data)).epsilon(1e-14));
      const VectorXd theta = m.parameters();
      std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
      int checked = 0;
      for (int trial = 0; trial < 60; ++trial) {
        const Eigen::Index k = pick(rng);
        const double eps = 1e-6;
        SrpModel probe = m;
        VectorXd t = theta;
        t[k] += eps;
        probe.set_parameters(t);
        const double up = dataset_loss(probe, data);
        t[k] -= 2 * eps;
        probe.set_parameters(t);
        const double dn = dataset_loss(probe, data);
        const double fd = (up - dn) / (2 * eps);
        if (std::abs(fd) < 1e-7 && std::abs(lg.gradient[k]) < 1e-7) continue;
        ++checked;
        CHECK(std::abs(lg.gradient[k] - fd) <= 1e-3 * std::max(std::abs(fd), 1e-4));
      }
      CHECK(checked > 20);
    }
  }

  TEST_CASE("zero model on zero targets does not move") {
    const SrpModel m = SrpModel::zeros(SrpConfig{4, 3, 2, 0.1, LossKind::SoftDtw});
    std::vector<TrainingPair> data{{Sequence::Zero(3, kFeatureCount), Sequence::Zero(2, kFeatureCount)}};
    const auto r = train(m, data, 20, 0.05);
    REQUIRE(r.loss_history.size() == 21);
    CHECK(std::abs(r.loss_history.back() - r.loss_history.front()) < 1e-12);
  }

  TEST_CASE("constant trajectory: loss falls in nearly every epoch") {
    const SrpModel m = small_model(21, 8, 4, 2);
    VectorXd row(kFeatureCount);
    row << 0.4, 0.1, 1.0, 0.3, 0.2;
    const Sequence in = row.transpose().replicate(4, 1);
    const Sequence out = row.transpose().replicate(2, 1);
    std::vector<TrainingPair> data{{in, out}};
    const auto r = train(m, data, 200, 0.05);
    int decreases = 0;
    for (std::size_t k = 1; k < r.loss_history.size(); ++k) decreases += r.loss_history[k] < r.loss_history[k - 1];
    CHECK(decreases >= 180);
    CHECK(r.loss_history.back() < r.loss_history.front());
  }

  TEST_CASE("training is deterministic and rejects bad windows") {
    std::mt19937_64 rng(6);
    std::vector<TrainingPair> data{{random_matrix(rng, 3, kFeatureCount), random_matrix(rng, 2, kFeatureCount)}};
    const auto a = train(small_model(5), data, 5, 0.01);
    const auto b = train(small_model(5), data, 5, 0.01);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.loss_history == b.loss_history);

    std::vector<TrainingPair> bad{{random_matrix(rng, 2, kFeatureCount), random_matrix(rng, 2, kFeatureCount)}};
    CHECK_THROWS_AS(train(small_model(5), bad, 1, 0.01), Error);
  }

  TEST_CASE("divergence is reported") {
    std::mt19937_64 rng(6);
    std::vector<TrainingPair> data{{random_matrix(rng, 3, kFeatureCount), random_matrix(rng, 2, kFeatureCount)}};
    SrpModel m = small_model(5);
    m.projection(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
      train(m, data, 1, 0.01);
      FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonFiniteLoss);
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("write/read round trip is exact") {
    SrpModel m = small_model(77, 5, 4, 3, LossKind::LogExpDtw);
    m.normalizer = Normalizer::for_scenario(27.7);
    std::ostringstream first;
    write_checkpoint(first, m);
    std::istringstream in(first.str());
    const SrpModel back = read_checkpoint(in);
    CHECK(back.parameters() == m.parameters());
    CHECK(back.normalizer == m.normalizer);
    CHECK(back.loss == LossKind::LogExpDtw);
    CHECK(back.sequence_length == 4);
    CHECK(back.horizon == 3);
    std::ostringstream second;
    write_checkpoint(second, back);
    CHECK(second.str() == first.str());
  }

  TEST_CASE("truncated or reshaped checkpoints are rejected") {
    std::ostringstream out;
    write_checkpoint(out, small_model(1));
    std::string text = out.str();
    std::istringstream truncated(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(truncated), Error);
    const auto pos = text.find("hidden = 4");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 10, "hidden = 3");
    std::istringstream reshaped(text);
    CHECK_THROWS_AS(read_checkpoint(reshaped), Error);
  }
}

TEST_SUITE("similarity") {
  TEST_CASE("identical trajectories score one") {
    const auto t = straight_trajectory(1, {0, 0}, {10, 0}, 8);
    const Normalizer n = Normalizer::for_scenario(30);
    CHECK(similarity(nullptr, n, t, t) == 1.0);
    const SrpModel m = small_model(3, 4, 4, 2);
    CHECK(similarity(&m, n, t, t) == 1.0);
  }

  TEST_CASE("score is exp of minus the distance") {
    const Normalizer n = Normalizer::for_scenario(30);
    const auto a = straight_trajectory(1, {0, 0}, {10, 0}, 6);
    const auto b = straight_trajectory(2, {0, 5}, {16, 0}, 6, 1.0);
    const double d = dtw(feature_sequence(b, n, 8, &a), feature_sequence(a, n, 8, &a)).distance;
    CHECK(similarity(nullptr, n, a, b) == doctest::Approx(std::exp(-d)).epsilon(1e-15));
    CHECK(std::exp(-1.0) == doctest::Approx(0.3679).epsilon(1e-4));
  }

  TEST_CASE("parallel movers score above diverging ones") {
    const Normalizer n = Normalizer::for_scenario(30);
    const auto core = straight_trajectory(1, {0, 0}, {12, 0}, 8);
    const auto parallel = straight_trajectory(2, {0, 4}, {12.5, 0}, 8);
    const auto diverging = straight_trajectory(3, {0, 4}, {-6, 0}, 8, 2.0);
    CHECK(similarity(nullptr, n, core, parallel) > similarity(nullptr, n, core, diverging));
  }

  TEST_CASE("fallback is symmetric and bounded") {
    const Normalizer n = Normalizer::for_scenario(30);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-20, 20);
    for (int trial = 0; trial < 50; ++trial) {
      const auto a = straight_trajectory(1, {u(rng), u(rng)}, {u(rng), u(rng)}, 3 + trial % 6, u(rng) / 10);
      const auto b = straight_trajectory(2, {u(rng), u(rng)}, {u(rng), u(rng)}, 2 + trial % 5, u(rng) / 10);
      const double ab = similarity(nullptr, n, a, b);
      CHECK(ab > 0.0);
      CHECK(ab <= 1.0);
      CHECK(ab == doctest::Approx(similarity(nullptr, n, b, a)).epsilon(1e-12));
    }
  }

  TEST_CASE("short histories") {
    const Normalizer n = Normalizer::for_scenario(30);
    const auto a = straight_trajectory(1, {0, 0}, {10, 0}, 1);
    const auto b = straight_trajectory(2, {0, 0}, {10, 0}, 5);
    try {
      similarity(nullptr, n, a, b);
      FAIL("expected InsufficientHistory");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InsufficientHistory);
    }
  }
}
