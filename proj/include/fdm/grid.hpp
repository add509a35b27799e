#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace fdm {

// Uniform grid t_g = g/(G-1) on [0,1], g = 0..G-1.
inline Eigen::VectorXd unit_grid(int size) {
  if (size < 2) throw std::invalid_argument("unit_grid: size must be >= 2");
  return Eigen::VectorXd::LinSpaced(size, 0.0, 1.0);
}

// Trapezoid quadrature weights for the uniform grid on [0,1].
inline Eigen::VectorXd trapezoid_weights(int size) {
  if (size < 2) throw std::invalid_argument("trapezoid_weights: size must be >= 2");
  const double h = 1.0 / (size - 1);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(size, h);
  w(0) = 0.5 * h;
  w(size - 1) = 0.5 * h;
  return w;
}

// Trapezoid rule on an arbitrary strictly increasing abscissa.
inline double trapezoid(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw std::invalid_argument("trapezoid: size mismatch");
  const Eigen::Index n = x.size() - 1;
  if (n < 1) return 0.0;
  return 0.5 * ((x.segment(1, n) - x.segment(0, n)).array() *
                (y.segment(1, n) + y.segment(0, n)).array())
                   .sum();
}

// Trapezoid rule on the uniform unit grid.
inline double trapezoid_unit(const Eigen::VectorXd& y) {
  const Eigen::Index g = y.size();
  if (g < 2) throw std::invalid_argument("trapezoid_unit: need >= 2 values");
  const double h = 1.0 / static_cast<double>(g - 1);
  return h * (y.sum() - 0.5 * (y(0) + y(g - 1)));
}

}  // namespace fdm
