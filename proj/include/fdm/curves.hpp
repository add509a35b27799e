#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fdm/grid.hpp"
#include "fdm/types.hpp"

namespace fdm {

// Piecewise-linear interpolation; x must be strictly increasing. Queries
// outside [x.front(), x.back()] clamp to the end values.
inline double interp_linear(const std::vector<double>& x, const std::vector<double>& y,
                            double q) {
  if (q <= x.front()) return y.front();
  if (q >= x.back()) return y.back();
  auto it = std::upper_bound(x.begin(), x.end(), q);
  const std::size_t hi = static_cast<std::size_t>(it - x.begin());
  const std::size_t lo = hi - 1;
  const double w = (q - x[lo]) / (x[hi] - x[lo]);
  return (1.0 - w) * y[lo] + w * y[hi];
}

// Rescale a raw curve to the unit domain (t = r / eod) and interpolate its
// values onto the uniform grid.
inline ScaledCurve rescale_curve(const RawCurve& raw, int grid_size = kDefaultGridSize) {
  raw.validate();
  if (grid_size < 2) throw std::invalid_argument("rescale_curve: grid_size must be >= 2");
  const double b = raw.eod();
  ScaledCurve out;
  out.unit_id = raw.unit_id;
  out.cycle = raw.cycle;
  out.values.resize(grid_size);
  for (int g = 0; g < grid_size; ++g) {
    const double t = static_cast<double>(g) / (grid_size - 1);
    out.values(g) = interp_linear(raw.times, raw.values, t * b);
  }
  return out;
}

// Evaluate a scaled curve at unit-domain points by linear interpolation
// between grid nodes.
inline double eval_scaled(const ScaledCurve& curve, double t) {
  const int g = curve.grid_size();
  if (g < 2) throw std::invalid_argument("eval_scaled: degenerate curve");
  if (t <= 0.0) return curve.values(0);
  if (t >= 1.0) return curve.values(g - 1);
  const double pos = t * (g - 1);
  const int lo = static_cast<int>(pos);
  const double w = pos - lo;
  return (1.0 - w) * curve.values(lo) + w * curve.values(lo + 1);
}

// L^p norm of the raw curve on its natural domain, trapezoid quadrature.
inline double lp_norm(const RawCurve& raw, double p) {
  if (p < 1.0) throw std::invalid_argument("lp_norm: p must be >= 1");
  raw.validate();
  double acc = 0.0;
  for (std::size_t k = 1; k < raw.times.size(); ++k) {
    const double a = std::pow(std::abs(raw.values[k - 1]), p);
    const double b = std::pow(std::abs(raw.values[k]), p);
    acc += 0.5 * (a + b) * (raw.times[k] - raw.times[k - 1]);
  }
  return std::pow(acc, 1.0 / p);
}

// Same norm computed from the scaled form: ||y||_p = (b * int |x|^p dt)^{1/p}.
inline double lp_norm_scaled(const ScaledCurve& curve, double eod, double p) {
  if (p < 1.0) throw std::invalid_argument("lp_norm_scaled: p must be >= 1");
  if (!(eod > 0.0)) throw std::invalid_argument("lp_norm_scaled: eod must be positive");
  const double integral = trapezoid_unit(curve.values.array().abs().pow(p).matrix());
  return std::pow(eod * integral, 1.0 / p);
}

// Relative drop of the norm from the first cycle; negative values allowed
// (curves can enlarge slightly).
inline double degradation_amount(double first_norm, double current_norm) {
  if (!(first_norm > 0.0))
    throw std::invalid_argument("degradation_amount: first-cycle norm must be positive");
  return (first_norm - current_norm) / first_norm;
}

}  // namespace fdm
