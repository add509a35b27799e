#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/optim.hpp"

namespace fdm {
namespace lme {

// One grouping unit of a linear mixed model: y = X alpha + Z w + eps,
// eps ~ N(0, sigma2 I), w ~ N(0, sigma2 Psi). Psi is the covariance of the
// random effects scaled by the residual variance.
struct UnitBlock {
  std::string unit_id;
  Eigen::MatrixXd x;  // n_i x p
  Eigen::MatrixXd z;  // n_i x r
  Eigen::VectorXd y;  // n_i
};

struct LmeOptions {
  OptimOptions optim;
  double log_diag_min = -12.0;  // clamps of the log-Cholesky diagonal
  double log_diag_max = 12.0;
};

struct LmeFit {
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_se;
  Eigen::MatrixXd alpha_cov;
  Eigen::MatrixXd psi;    // r x r, scaled by sigma2
  double sigma2 = 0.0;
  std::vector<Eigen::VectorXd> blups;  // one w_i per unit, input order
  std::vector<std::string> unit_ids;
  double loglik_reml = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> deviance_trace;
};

namespace detail {

// Per-unit cross products; everything the deviance needs, computed once.
struct SuffStats {
  Eigen::MatrixXd xtx, ztx, ztz;
  Eigen::VectorXd xty, zty;
  double yty = 0.0;
  int n = 0;
};

inline std::vector<SuffStats> make_stats(const std::vector<UnitBlock>& units) {
  std::vector<SuffStats> stats;
  stats.reserve(units.size());
  for (const auto& u : units) {
    SuffStats s;
    s.xtx = u.x.transpose() * u.x;
    s.ztx = u.z.transpose() * u.x;
    s.ztz = u.z.transpose() * u.z;
    s.xty = u.x.transpose() * u.y;
    s.zty = u.z.transpose() * u.y;
    s.yty = u.y.squaredNorm();
    s.n = static_cast<int>(u.y.size());
    stats.push_back(std::move(s));
  }
  return stats;
}

inline int chol_param_size(int r) { return r * (r + 1) / 2; }

// Unpack log-Cholesky parameters into a lower-triangular factor L with
// positive diagonal, so Psi = L L^T is always PSD.
inline Eigen::MatrixXd unpack_chol(const Eigen::VectorXd& theta, int r, double lo, double hi) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(r, r);
  int idx = 0;
  for (int j = 0; j < r; ++j) {
    l(j, j) = std::exp(std::clamp(theta(idx++), lo, hi));
    for (int i = j + 1; i < r; ++i) l(i, j) = theta(idx++);
  }
  return l;
}

inline Eigen::VectorXd pack_chol(const Eigen::MatrixXd& psi, double lo, double hi) {
  const int r = static_cast<int>(psi.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(psi + 1e-10 * Eigen::MatrixXd::Identity(r, r));
  Eigen::MatrixXd l = llt.matrixL();
  if (llt.info() != Eigen::Success) {
    l = Eigen::MatrixXd::Identity(r, r) * 0.1;
  }
  Eigen::VectorXd theta(chol_param_size(r));
  int idx = 0;
  for (int j = 0; j < r; ++j) {
    theta(idx++) = std::clamp(std::log(std::max(l(j, j), 1e-300)), lo, hi);
    for (int i = j + 1; i < r; ++i) theta(idx++) = l(i, j);
  }
  return theta;
}

struct DevianceParts {
  double deviance = 0.0;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd gls_info;  // sum_i w_i X' V^-1 X
  double sigma2 = 0.0;
  double nw = 0.0;
};

// Profiled REML deviance. V_i = I + Z Psi Z'; all V_i algebra reduces to
// r x r solves through T_i = I + L' Z'Z L (Woodbury on the suff. stats).
inline DevianceParts reml_deviance(const std::vector<SuffStats>& stats,
                                   const Eigen::VectorXd& weights, const Eigen::MatrixXd& l,
                                   int p) {
  const int r = static_cast<int>(l.rows());
  DevianceParts out;
  Eigen::MatrixXd sxx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd sxy = Eigen::VectorXd::Zero(p);
  double syy = 0.0;
  double logdet_v = 0.0;
  double nw = 0.0;

  for (std::size_t i = 0; i < stats.size(); ++i) {
    const double wi = weights(static_cast<Eigen::Index>(i));
    if (wi == 0.0) continue;
    const SuffStats& s = stats[i];
    const Eigen::MatrixXd t = Eigen::MatrixXd::Identity(r, r) + l.transpose() * s.ztz * l;
    Eigen::LLT<Eigen::MatrixXd> llt(t);
    if (llt.info() != Eigen::Success) {
      out.deviance = std::numeric_limits<double>::infinity();
      return out;
    }
    const Eigen::MatrixXd lzx = l.transpose() * s.ztx;  // r x p
    const Eigen::VectorXd lzy = l.transpose() * s.zty;  // r
    const Eigen::MatrixXd t_lzx = llt.solve(lzx);
    const Eigen::VectorXd t_lzy = llt.solve(lzy);

    sxx += wi * (s.xtx - lzx.transpose() * t_lzx);
    sxy += wi * (s.xty - lzx.transpose() * t_lzy);
    syy += wi * (s.yty - lzy.dot(t_lzy));
    double ld = 0.0;
    for (int j = 0; j < r; ++j) ld += std::log(llt.matrixL()(j, j));
    logdet_v += wi * 2.0 * ld;
    nw += wi * s.n;
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(sxx);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    out.deviance = std::numeric_limits<double>::infinity();
    return out;
  }
  out.alpha = ldlt.solve(sxy);
  const double rss = std::max(syy - out.alpha.dot(sxy), 1e-300);
  const double dof = nw - p;
  if (dof <= 0.0) throw std::invalid_argument("lme: fewer observations than fixed effects");
  out.sigma2 = rss / dof;
  const double logdet_sxx = ldlt.vectorD().array().cwiseMax(1e-300).log().sum();
  out.deviance = logdet_v + logdet_sxx + dof * std::log(out.sigma2) + dof +
                 dof * std::log(2.0 * std::numbers::pi_v<double>);
  out.gls_info = sxx;
  out.nw = nw;
  return out;
}

}  // namespace detail

// Moment-based starting values: pooled OLS for the fixed effects, then the
// spread of per-unit OLS coefficients of the residuals on Z.
inline Eigen::MatrixXd initial_psi(const std::vector<UnitBlock>& units) {
  const int p = static_cast<int>(units.front().x.cols());
  const int r = static_cast<int>(units.front().z.cols());
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  for (const auto& u : units) {
    xtx += u.x.transpose() * u.x;
    xty += u.x.transpose() * u.y;
  }
  const Eigen::VectorXd alpha = xtx.ldlt().solve(xty);

  Eigen::MatrixXd coef_sum = Eigen::MatrixXd::Zero(r, r);
  int used = 0;
  double within_rss = 0.0;  // residual variation net of per-unit Z trends
  double within_n = 0.0;
  double rss = 0.0;
  double n_total = 0.0;
  for (const auto& u : units) {
    const Eigen::VectorXd resid = u.y - u.x * alpha;
    rss += resid.squaredNorm();
    n_total += static_cast<double>(resid.size());
    if (u.z.rows() <= u.z.cols()) continue;
    const Eigen::MatrixXd ztz =
        u.z.transpose() * u.z + 1e-8 * Eigen::MatrixXd::Identity(r, r);
    const Eigen::VectorXd d = ztz.ldlt().solve(u.z.transpose() * resid);
    coef_sum += d * d.transpose();
    within_rss += (resid - u.z * d).squaredNorm();
    within_n += static_cast<double>(resid.size() - r);
    ++used;
  }
  const double sigma2 =
      used > 0 ? std::max(within_rss / std::max(within_n, 1.0), 1e-10)
               : std::max(rss / std::max(n_total - p, 1.0), 1e-10);
  Eigen::MatrixXd psi = used > 0 ? Eigen::MatrixXd((coef_sum / used) / sigma2)
                                 : Eigen::MatrixXd(Eigen::MatrixXd::Identity(r, r) * 0.1);
  psi += 1e-4 * Eigen::MatrixXd::Identity(r, r);
  return psi;
}

// Weighted REML fit. Weights multiply per-unit log-likelihood contributions;
// the all-ones vector reproduces the unweighted fit exactly.
inline LmeFit fit(const std::vector<UnitBlock>& units, const Eigen::VectorXd& weights,
                  const LmeOptions& options = {}) {
  if (units.size() < 2) throw std::invalid_argument("lme: need at least 2 units");
  if (weights.size() != static_cast<Eigen::Index>(units.size()))
    throw std::invalid_argument("lme: weight length mismatch");
  const int p = static_cast<int>(units.front().x.cols());
  const int r = static_cast<int>(units.front().z.cols());
  for (const auto& u : units) {
    if (u.x.cols() != p || u.z.cols() != r || u.x.rows() != u.y.size() ||
        u.z.rows() != u.y.size())
      throw std::invalid_argument("lme: inconsistent block shapes");
  }

  const auto stats = detail::make_stats(units);
  const double lo = options.log_diag_min;
  const double hi = options.log_diag_max;

  // Accumulate in unit-id order so estimates do not depend on input order.
  std::vector<std::size_t> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return units[a].unit_id < units[b].unit_id;
  });
  std::vector<detail::SuffStats> sorted_stats;
  Eigen::VectorXd sorted_weights(weights.size());
  sorted_stats.reserve(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted_stats.push_back(stats[order[i]]);
    sorted_weights(static_cast<Eigen::Index>(i)) = weights(static_cast<Eigen::Index>(order[i]));
  }

  const auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::MatrixXd l = detail::unpack_chol(theta, r, lo, hi);
    return detail::reml_deviance(sorted_stats, sorted_weights, l, p).deviance;
  };

  std::vector<UnitBlock> sorted_units;
  sorted_units.reserve(units.size());
  for (std::size_t i : order) sorted_units.push_back(units[i]);

  // Deterministic data (exact interpolation) makes the variance surface
  // degenerate and the GLS ill-conditioned; detect it and report the exact
  // OLS solution instead.
  {
    const int pcols = p;
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(pcols, pcols);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(pcols);
    double yty = 0.0, ysum = 0.0, ncount = 0.0;
    for (const auto& s : sorted_stats) {
      xtx += s.xtx;
      xty += s.xty;
      yty += s.yty;
      ncount += s.n;
    }
    for (const auto& u : sorted_units) ysum += u.y.sum();
    const Eigen::VectorXd ols = xtx.ldlt().solve(xty);
    const double rss_ols = yty - ols.dot(xty);
    const double total_ss = std::max(yty - ysum * ysum / ncount, 1e-300);
    if (rss_ols / total_ss < 1e-20) {
      LmeFit fit;
      fit.alpha = ols;
      fit.alpha_cov = Eigen::MatrixXd::Zero(pcols, pcols);
      fit.alpha_se = Eigen::VectorXd::Zero(pcols);
      fit.psi = Eigen::MatrixXd::Zero(r, r);
      fit.sigma2 = std::max(rss_ols, 0.0) / std::max(ncount - pcols, 1.0);
      for (const auto& u : units) {
        fit.blups.push_back(Eigen::VectorXd::Zero(r));
        fit.unit_ids.push_back(u.unit_id);
      }
      fit.converged = true;
      fit.iterations = 0;
      fit.loglik_reml = 0.0;
      return fit;
    }
  }

  Eigen::VectorXd theta0 = detail::pack_chol(initial_psi(sorted_units), lo, hi);
  OptimResult opt = minimize_bfgs(objective, theta0, options.optim);

  const Eigen::MatrixXd l = detail::unpack_chol(opt.x, r, lo, hi);
  const auto parts = detail::reml_deviance(sorted_stats, sorted_weights, l, p);

  LmeFit fit;
  fit.alpha = parts.alpha;
  fit.psi = l * l.transpose();
  fit.sigma2 = parts.sigma2;
  fit.alpha_cov = parts.sigma2 * parts.gls_info.inverse();
  fit.alpha_se = fit.alpha_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.loglik_reml = -0.5 * parts.deviance;
  fit.converged = opt.converged;
  fit.iterations = opt.iterations;
  fit.deviance_trace = opt.trace;

  // BLUPs from each unit's own data: w_i = Psi Z' V^-1 (y - X alpha)
  //                                       = L T^-1 L' (Z'y - Z'X alpha).
  fit.blups.reserve(units.size());
  for (const auto& s : stats) {
    const Eigen::MatrixXd t = Eigen::MatrixXd::Identity(r, r) + l.transpose() * s.ztz * l;
    const Eigen::VectorXd rhs = l.transpose() * (s.zty - s.ztx * fit.alpha);
    fit.blups.push_back(l * t.llt().solve(rhs));
  }
  for (const auto& u : units) fit.unit_ids.push_back(u.unit_id);
  return fit;
}

inline LmeFit fit(const std::vector<UnitBlock>& units, const LmeOptions& options = {}) {
  return fit(units, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(units.size())), options);
}

}  // namespace lme
}  // namespace fdm
