#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "rcms/core_types.hpp"

namespace rcms::test {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = d(rng);
  return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, n, 1, lo, hi);
}

inline VehicleState make_state(VehicleId id, Vec2 pos, Vec2 vel, double t = 0.0) {
  VehicleState s;
  s.vehicle_id = id;
  s.position = pos;
  s.speed = vel;
  s.timestamp = t;
  if (vel.norm() > 0) s.direction = vel * (1.0 / vel.norm());
  return s;
}

}  // namespace rcms::test
