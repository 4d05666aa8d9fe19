#pragma once

#include <cmath>
#include <random>
#include <utility>

#include <Eigen/Dense>

namespace rcms::srp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Gated recurrent unit parameters. Input weights are H x D, recurrent weights H x H.
struct GruCell {
  MatrixXd W_z, W_r, W_h;
  MatrixXd U_z, U_r, U_h;
  VectorXd b_z, b_r, b_h;

  static GruCell zeros(Eigen::Index hidden, Eigen::Index input);
  /// Uniform(-scale, scale) entries drawn in a fixed order from `rng`.
  static GruCell random(Eigen::Index hidden, Eigen::Index input, std::mt19937_64& rng, double scale);

  Eigen::Index hidden_size() const { return W_z.rows(); }
  Eigen::Index input_size() const { return W_z.cols(); }
  /// Throws ShapeMismatch when the nine blocks disagree.
  void check_shapes() const;
  bool all_finite() const;

  GruCell& operator+=(const GruCell& other);
  GruCell& operator*=(double s);
};

/// Intermediate values of one step, kept for the backward pass.
struct GruStepCache {
  VectorXd x, h_prev, z, r, h_tilde, h;
};

/// h_t = z ⊙ h_{t-1} + (1 - z) ⊙ h̃_t with sigmoid gates z, r and tanh candidate.
VectorXd gru_step(const GruCell& cell, const VectorXd& x, const VectorXd& h_prev,
                  GruStepCache* cache = nullptr);

/// Accumulates parameter gradients into `grad` and returns (dL/dx, dL/dh_prev)
/// for the step recorded in `cache`, given dL/dh_t.
std::pair<VectorXd, VectorXd> gru_step_backward(const GruCell& cell, const GruStepCache& cache,
                                                const VectorXd& dh, GruCell& grad);

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace rcms::srp
