#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace fdm {

struct OptimOptions {
  int max_iterations = 500;
  double rel_tol = 1e-8;      // relative objective change
  double param_tol = 1e-6;    // max-norm parameter change
  double fd_step = 1e-6;      // central-difference step scale
  double max_step_inf = 2.0;  // cap on a single step, max-norm
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::vector<double> trace;  // objective per accepted iterate
};

namespace detail {

inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double step, int& evals) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = step * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + h;
    const double fp = f(xp);
    xp(j) = x(j) - h;
    const double fm = f(xp);
    xp(j) = x(j);
    g(j) = (fp - fm) / (2.0 * h);
    evals += 2;
  }
  return g;
}

}  // namespace detail

// Quasi-Newton (BFGS) minimizer with numerically computed gradients and a
// backtracking Armijo line search. Objectives here are smooth, low
// dimensional REML deviances, so this is more than adequate.
inline OptimResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                                 Eigen::VectorXd x0, const OptimOptions& opt = {}) {
  OptimResult res;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = std::move(x0);
  double fx = f(x);
  res.evaluations = 1;
  res.trace.push_back(fx);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = detail::numeric_gradient(f, x, opt.fd_step, res.evaluations);

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter + 1;
    Eigen::VectorXd dir = -(h_inv * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // reset on non-descent (stale curvature)
      h_inv.setIdentity();
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) {
        res.converged = true;
        break;
      }
    }

    // keep single steps bounded; log-scale variance parameters make distant
    // regions of the surface flat, which would stall the numeric gradient
    const double dir_inf = dir.cwiseAbs().maxCoeff();
    double step = dir_inf > opt.max_step_inf ? opt.max_step_inf / dir_inf : 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = true;  // no further descent at line-search resolution
      break;
    }

    Eigen::VectorXd g_new = detail::numeric_gradient(f, x_new, opt.fd_step, res.evaluations);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Eigen::VectorXd hy = h_inv * y;
      const double yhy = y.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    const double df = std::abs(fx - f_new);
    const double dx = s.cwiseAbs().maxCoeff();
    x = x_new;
    fx = f_new;
    g = g_new;
    res.trace.push_back(fx);
    if (df <= opt.rel_tol * (std::abs(fx) + opt.rel_tol) && dx <= opt.param_tol) {
      res.converged = true;
      break;
    }
  }

  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace fdm
