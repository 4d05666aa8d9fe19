#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rcms::srp {

/// A feature sequence: one row per time step, one column per feature.
using Sequence = Eigen::MatrixXd;

/// Monotone alignment from (0,0) to (|a|-1,|b|-1) with unit steps.
struct WarpingPath {
  std::vector<std::pair<int, int>> cells;

  std::size_t size() const { return cells.size(); }
  /// Binary alignment matrix with ones on path cells.
  Eigen::MatrixXi matrix(int rows, int cols) const;
  /// True when the path starts and ends at the corners and only steps by (1,0), (0,1) or (1,1).
  bool valid(int rows, int cols) const;
};

struct DtwResult {
  double distance = 0.0;
  WarpingPath path;
};

/// Squared Euclidean distance between every pair of rows.
Eigen::MatrixXd pairwise_sq_cost(const Sequence& a, const Sequence& b);

/// Minimises sqrt(sum of squared pair costs along the path) / path length over
/// all monotone paths. The length normalisation makes the objective
/// non-additive, so the recursion keeps the best cost per (cell, path length).
/// Throws EmptySequence / ShapeMismatch.
DtwResult dtw(const Sequence& a, const Sequence& b);

/// Smoothing applied to alignment costs.
enum class LossKind {
  SoftDtw,    // soft-minimum over all alignments
  LogExpDtw,  // -log(L * exp(-dtw / L^2)) with the hard length-normalised DTW
};

struct LossResult {
  double value = 0.0;
  Sequence grad_a;  // d value / d a
  Sequence grad_b;  // d value / d b
};

/// Soft-DTW value -gamma * log(sum over paths exp(-path cost / gamma)) with squared costs.
double soft_dtw(const Sequence& a, const Sequence& b, double gamma);

/// Training objective between two sequences, scaled by 1/L^2 where L is the
/// longer length. Gradients are exact for SoftDtw and follow the optimal path
/// for LogExpDtw.
LossResult soft_dtw_loss(const Sequence& a, const Sequence& b, double gamma,
                         LossKind kind = LossKind::SoftDtw);

/// Analytic value of soft_dtw_loss for two identical sequences of lengths (n, m):
/// all path costs are zero so the sum counts the monotone paths.
double soft_dtw_loss_floor(int n, int m, double gamma);

/// Number of monotone paths between opposite corners of an n x m grid (Delannoy number).
double count_warping_paths(int n, int m);

}  // namespace rcms::srp
