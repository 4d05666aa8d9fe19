#include "rcms/srp/gru.hpp"

#include <fmt/format.h>

#include "rcms/core_types.hpp"

namespace rcms::srp {

GruCell GruCell::zeros(Eigen::Index hidden, Eigen::Index input) {
  GruCell c;
  c.W_z = c.W_r = c.W_h = MatrixXd::Zero(hidden, input);
  c.U_z = c.U_r = c.U_h = MatrixXd::Zero(hidden, hidden);
  c.b_z = c.b_r = c.b_h = VectorXd::Zero(hidden);
  return c;
}

GruCell GruCell::random(Eigen::Index hidden, Eigen::Index input, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  GruCell c = zeros(hidden, input);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  };
  fill(c.W_z), fill(c.W_r), fill(c.W_h);
  fill(c.U_z), fill(c.U_r), fill(c.U_h);
  fill(c.b_z), fill(c.b_r), fill(c.b_h);
  return c;
}

void GruCell::check_shapes() const {
  const auto h = hidden_size();
  const auto d = input_size();
  const bool ok = W_r.rows() == h && W_h.rows() == h && W_r.cols() == d && W_h.cols() == d &&
                  U_z.rows() == h && U_z.cols() == h && U_r.rows() == h && U_r.cols() == h &&
                  U_h.rows() == h && U_h.cols() == h && b_z.size() == h && b_r.size() == h &&
                  b_h.size() == h;
  if (!ok) throw Error(Errc::ShapeMismatch, fmt::format("GRU cell blocks disagree with H={} D={}", h, d));
}

bool GruCell::all_finite() const {
  return W_z.allFinite() && W_r.allFinite() && W_h.allFinite() && U_z.allFinite() &&
         U_r.allFinite() && U_h.allFinite() && b_z.allFinite() && b_r.allFinite() && b_h.allFinite();
}

GruCell& GruCell::operator+=(const GruCell& o) {
  W_z += o.W_z, W_r += o.W_r, W_h += o.W_h;
  U_z += o.U_z, U_r += o.U_r, U_h += o.U_h;
  b_z += o.b_z, b_r += o.b_r, b_h += o.b_h;
  return *this;
}

GruCell& GruCell::operator*=(double s) {
  W_z *= s, W_r *= s, W_h *= s;
  U_z *= s, U_r *= s, U_h *= s;
  b_z *= s, b_r *= s, b_h *= s;
  return *this;
}

VectorXd gru_step(const GruCell& cell, const VectorXd& x, const VectorXd& h_prev, GruStepCache* cache) {
  if (x.size() != cell.input_size() || h_prev.size() != cell.hidden_size())
    throw Error(Errc::ShapeMismatch,
                fmt::format("gru_step: x has {} entries (want {}), h has {} (want {})", x.size(),
                            cell.input_size(), h_prev.size(), cell.hidden_size()));
  const VectorXd z = (cell.W_z * x + cell.U_z * h_prev + cell.b_z).unaryExpr(&sigmoid);
  const VectorXd r = (cell.W_r * x + cell.U_r * h_prev + cell.b_r).unaryExpr(&sigmoid);
  const VectorXd h_tilde =
      (cell.W_h * x + cell.U_h * r.cwiseProduct(h_prev) + cell.b_h).array().tanh().matrix();
  VectorXd h = z.cwiseProduct(h_prev) + (VectorXd::Ones(z.size()) - z).cwiseProduct(h_tilde);
  if (cache) *cache = GruStepCache{x, h_prev, z, r, h_tilde, h};
  return h;
}

std::pair<VectorXd, VectorXd> gru_step_backward(const GruCell& cell, const GruStepCache& c,
                                                const VectorXd& dh, GruCell& grad) {
  const auto ones = VectorXd::Ones(c.z.size());
  const VectorXd dz = dh.cwiseProduct(c.h_prev - c.h_tilde);
  const VectorXd dh_tilde = dh.cwiseProduct(ones - c.z);
  VectorXd dh_prev = dh.cwiseProduct(c.z);

  const VectorXd da_h = dh_tilde.cwiseProduct(ones - c.h_tilde.cwiseProduct(c.h_tilde));
  const VectorXd rh = c.r.cwiseProduct(c.h_prev);
  grad.W_h += da_h * c.x.transpose();
  grad.U_h += da_h * rh.transpose();
  grad.b_h += da_h;
  const VectorXd drh = cell.U_h.transpose() * da_h;
  const VectorXd dr = drh.cwiseProduct(c.h_prev);
  dh_prev += drh.cwiseProduct(c.r);

  const VectorXd da_z = dz.cwiseProduct(c.z.cwiseProduct(ones - c.z));
  const VectorXd da_r = dr.cwiseProduct(c.r.cwiseProduct(ones - c.r));
  grad.W_z += da_z * c.x.transpose();
  grad.U_z += da_z * c.h_prev.transpose();
  grad.b_z += da_z;
  grad.W_r += da_r * c.x.transpose();
  grad.U_r += da_r * c.h_prev.transpose();
  grad.b_r += da_r;

  dh_prev += cell.U_z.transpose() * da_z + cell.U_r.transpose() * da_r;
  VectorXd dx = cell.W_h.transpose() * da_h + cell.W_z.transpose() * da_z + cell.W_r.transpose() * da_r;
  return {std::move(dx), std::move(dh_prev)};
}

}  // namespace rcms::srp
