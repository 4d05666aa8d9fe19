#include "rcms/srp/dtw.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include <fmt/format.h>

#include "rcms/core_types.hpp"

namespace rcms::srp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const Sequence& a, const Sequence& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error(Errc::EmptySequence, "DTW needs nonempty sequences");
  if (a.cols() != b.cols())
    throw Error(Errc::ShapeMismatch, fmt::format("DTW feature widths differ: {} vs {}", a.cols(), b.cols()));
}

}  // namespace

Eigen::MatrixXi WarpingPath::matrix(int rows, int cols) const {
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(rows, cols);
  for (const auto& [i, j] : cells) m(i, j) = 1;
  return m;
}

bool WarpingPath::valid(int rows, int cols) const {
  if (cells.empty() || cells.front() != std::pair{0, 0} || cells.back() != std::pair{rows - 1, cols - 1})
    return false;
  for (std::size_t k = 1; k < cells.size(); ++k) {
    const int di = cells[k].first - cells[k - 1].first;
    const int dj = cells[k].second - cells[k - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || di + dj == 0) return false;
  }
  return true;
}

Eigen::MatrixXd pairwise_sq_cost(const Sequence& a, const Sequence& b) {
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return c;
}

DtwResult dtw(const Sequence& a, const Sequence& b) {
  check_pair(a, b);
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.rows());
  const int max_len = n + m - 1;
  const Eigen::MatrixXd cost = pairwise_sq_cost(a, b);

  // best[(i*m + j) * (max_len+1) + len]: smallest summed cost of a path of
  // `len` cells ending at (i,j); `from` records the step that produced it.
  const auto stride = static_cast<std::size_t>(max_len + 1);
  std::vector<double> best(static_cast<std::size_t>(n * m) * stride, kInf);
  std::vector<std::uint8_t> from(best.size(), 0);
  auto at = [&](int i, int j, int len) { return (static_cast<std::size_t>(i * m + j)) * stride + len; };

  best[at(0, 0, 1)] = cost(0, 0);
  constexpr std::array<std::pair<int, int>, 3> steps{{{1, 1}, {1, 0}, {0, 1}}};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == 0 && j == 0) continue;
      for (std::uint8_t s = 0; s < steps.size(); ++s) {
        const int pi = i - steps[s].first;
        const int pj = j - steps[s].second;
        if (pi < 0 || pj < 0) continue;
        for (int len = 1; len < max_len; ++len) {
          const double prev = best[at(pi, pj, len)];
          if (prev == kInf) continue;
          const double cand = prev + cost(i, j);
          if (cand < best[at(i, j, len + 1)]) {
            best[at(i, j, len + 1)] = cand;
            from[at(i, j, len + 1)] = s;
          }
        }
      }
    }
  }

  DtwResult result;
  result.distance = kInf;
  int best_len = 0;
  for (int len = 1; len <= max_len; ++len) {
    const double s = best[at(n - 1, m - 1, len)];
    if (s == kInf) continue;
    const double value = std::sqrt(s) / len;
    if (value < result.distance) {
      result.distance = value;
      best_len = len;
    }
  }

  int i = n - 1;
  int j = m - 1;
  for (int len = best_len; len >= 1; --len) {
    result.path.cells.emplace_back(i, j);
    if (len == 1) break;
    const auto s = from[at(i, j, len)];
    i -= steps[s].first;
    j -= steps[s].second;
  }
  std::reverse(result.path.cells.begin(), result.path.cells.end());
  return result;
}

namespace {

struct SoftTable {
  Eigen::MatrixXd R;                     // (n+1) x (m+1), R(0,0) = 0, borders +inf
  std::vector<std::array<double, 3>> w;  // softmin weights for (diag, up, left) per cell
};

SoftTable soft_forward(const Eigen::MatrixXd& cost, double gamma) {
  const auto n = cost.rows();
  const auto m = cost.cols();
  SoftTable t;
  t.R = Eigen::MatrixXd::Constant(n + 1, m + 1, kInf);
  t.R(0, 0) = 0.0;
  t.w.resize(static_cast<std::size_t>(n * m));
  for (Eigen::Index i = 1; i <= n; ++i) {
    for (Eigen::Index j = 1; j <= m; ++j) {
      const std::array<double, 3> prev{t.R(i - 1, j - 1), t.R(i - 1, j), t.R(i, j - 1)};
      const double lo = std::min({prev[0], prev[1], prev[2]});
      std::array<double, 3> e{};
      double sum = 0.0;
      for (int k = 0; k < 3; ++k) {
        e[k] = prev[k] == kInf ? 0.0 : std::exp(-(prev[k] - lo) / gamma);
        sum += e[k];
      }
      auto& w = t.w[static_cast<std::size_t>((i - 1) * m + (j - 1))];
      for (int k = 0; k < 3; ++k) w[k] = e[k] / sum;
      t.R(i, j) = cost(i - 1, j - 1) + lo - gamma * std::log(sum);
    }
  }
  return t;
}

// d R(n,m) / d cost(i,j), by reverse accumulation through the softmin weights.
Eigen::MatrixXd soft_backward(const SoftTable& t, Eigen::Index n, Eigen::Index m) {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n + 1, m + 1);
  Eigen::MatrixXd dcost(n, m);
  G(n, m) = 1.0;
  for (Eigen::Index i = n; i >= 1; --i) {
    for (Eigen::Index j = m; j >= 1; --j) {
      const double g = G(i, j);
      dcost(i - 1, j - 1) = g;
      const auto& w = t.w[static_cast<std::size_t>((i - 1) * m + (j - 1))];
      G(i - 1, j - 1) += g * w[0];
      G(i - 1, j) += g * w[1];
      G(i, j - 1) += g * w[2];
    }
  }
  return dcost;
}

void cost_grad_to_inputs(const Sequence& a, const Sequence& b, const Eigen::MatrixXd& dcost, double scale,
                         LossResult& out) {
  out.grad_a = Sequence::Zero(a.rows(), a.cols());
  out.grad_b = Sequence::Zero(b.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double g = dcost(i, j);
      if (g == 0.0) continue;
      const Eigen::RowVectorXd diff = 2.0 * scale * g * (a.row(i) - b.row(j));
      out.grad_a.row(i) += diff;
      out.grad_b.row(j) -= diff;
    }
}

}  // namespace

double soft_dtw(const Sequence& a, const Sequence& b, double gamma) {
  check_pair(a, b);
  if (!(gamma > 0.0)) throw Error(Errc::InvalidArgument, "soft-DTW gamma must be > 0");
  return soft_forward(pairwise_sq_cost(a, b), gamma).R(a.rows(), b.rows());
}

LossResult soft_dtw_loss(const Sequence& a, const Sequence& b, double gamma, LossKind kind) {
  check_pair(a, b);
  if (!(gamma > 0.0)) throw Error(Errc::InvalidArgument, "soft-DTW gamma must be > 0");
  const double L = static_cast<double>(std::max(a.rows(), b.rows()));
  const double scale = 1.0 / (L * L);
  LossResult out;
  if (kind == LossKind::SoftDtw) {
    const auto cost = pairwise_sq_cost(a, b);
    const auto table = soft_forward(cost, gamma);
    out.value = table.R(a.rows(), b.rows()) * scale;
    cost_grad_to_inputs(a, b, soft_backward(table, a.rows(), b.rows()), scale, out);
    return out;
  }
  const auto hard = dtw(a, b);
  out.value = hard.distance * scale - std::log(L);
  Eigen::MatrixXd dcost = Eigen::MatrixXd::Zero(a.rows(), b.rows());
  if (hard.distance > 0.0) {
    // distance = sqrt(S)/len, so d distance / d cost on the path = 1 / (2 len sqrt(S)) = 1 / (2 len^2 distance).
    const double len = static_cast<double>(hard.path.size());
    const double g = 1.0 / (2.0 * len * len * hard.distance);
    for (const auto& [i, j] : hard.path.cells) dcost(i, j) = g;
  }
  cost_grad_to_inputs(a, b, dcost, scale, out);
  return out;
}

double count_warping_paths(int n, int m) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == 0 || j == 0) {
        d(i, j) = 1.0;
        continue;
      }
      d(i, j) = d(i - 1, j - 1) + d(i - 1, j) + d(i, j - 1);
    }
  return d(n - 1, m - 1);
}

double soft_dtw_loss_floor(int n, int m, double gamma) {
  const double L = static_cast<double>(std::max(n, m));
  return -gamma * std::log(count_warping_paths(n, m)) / (L * L);
}

}  // namespace rcms::srp
