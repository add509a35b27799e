#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/fpca.hpp"
#include "fdm/optim.hpp"
#include "fdm/types.hpp"

namespace fdm {

// Multivariate mixed model for the K FPC scores per cycle:
//   gamma_ic = v0 + u_0i + (v1 + u_1i) c + P z_ic + delta_ic,
// (u_0i, u_1i) ~ N(0, Sigma_U) jointly across components, delta_ic ~
// N(0, Sigma_delta) correlated across components within a cycle and
// independent across cycles.

struct MlmmConfig {
  std::vector<std::string> covariates;  // columns of P, resolved by name
  bool diagonal_sigma_u = false;        // fallback for ill-conditioned fits
  OptimOptions optim;
  double log_diag_min = -12.0;
  double log_diag_max = 12.0;
};

struct MlmmFit {
  int k = 0;
  std::vector<std::string> covariates;
  Eigen::VectorXd v0;       // K intercepts
  Eigen::VectorXd v1;       // K cycle slopes
  Eigen::MatrixXd p;        // K x m covariate coefficients
  Eigen::MatrixXd v_cov;    // covariance of the stacked fixed effects
  Eigen::VectorXd v_se;     // SEs in the same stacking as fixed_effects()
  Eigen::MatrixXd sigma_u;  // 2K x 2K, ordered (u_0, u_1) blocks
  Eigen::MatrixXd sigma_delta;  // K x K
  struct Blup {
    std::string unit_id;
    Eigen::VectorXd u0;  // K
    Eigen::VectorXd u1;  // K
  };
  std::vector<Blup> blups;
  double loglik_reml = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> deviance_trace;

  // Stacked fixed effects, component-major: (v0_k, v1_k, P_k,1..m) per k.
  Eigen::VectorXd fixed_effects() const {
    const int m = static_cast<int>(covariates.size());
    const int f = 2 + m;
    Eigen::VectorXd v(k * f);
    for (int kk = 0; kk < k; ++kk) {
      v(kk * f + 0) = v0(kk);
      v(kk * f + 1) = v1(kk);
      for (int h = 0; h < m; ++h) v(kk * f + 2 + h) = p(kk, h);
    }
    return v;
  }

  const Blup& blup(const std::string& unit_id) const {
    for (const auto& b : blups)
      if (b.unit_id == unit_id) return b;
    throw std::invalid_argument("MlmmFit: no BLUP for unit '" + unit_id + "'");
  }

  bool has_unit(const std::string& unit_id) const {
    for (const auto& b : blups)
      if (b.unit_id == unit_id) return true;
    return false;
  }
};

namespace mlmm_detail {

// Per-unit cross products of the shared per-cycle designs. F rows are
// (1, c, z'), C rows are (1, c); Y columns are the K score components.
struct UnitStats {
  std::string unit_id;
  Eigen::MatrixXd ftf, ftc, ctc, fty, cty, yty;
  int n = 0;
};

struct Assembled {
  std::vector<UnitStats> stats;
  int k = 0;
  int f = 0;  // fixed design columns per component
};

inline int tri_size(int r) { return r * (r + 1) / 2; }

inline Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& theta, int offset, int r, double lo,
                                    double hi, bool diagonal_only) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(r, r);
  int idx = offset;
  if (diagonal_only) {
    for (int j = 0; j < r; ++j) l(j, j) = std::exp(std::clamp(theta(idx++), lo, hi));
    return l;
  }
  for (int j = 0; j < r; ++j) {
    l(j, j) = std::exp(std::clamp(theta(idx++), lo, hi));
    for (int i = j + 1; i < r; ++i) l(i, j) = theta(idx++);
  }
  return l;
}

inline void pack_lower(const Eigen::MatrixXd& cov, double lo, double hi, bool diagonal_only,
                       Eigen::VectorXd& theta, int& idx) {
  const int r = static_cast<int>(cov.rows());
  Eigen::MatrixXd reg = cov + 1e-10 * Eigen::MatrixXd::Identity(r, r);
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  Eigen::MatrixXd l;
  if (llt.info() == Eigen::Success)
    l = llt.matrixL();
  else
    l = Eigen::MatrixXd::Identity(r, r) * 0.1;
  if (diagonal_only) {
    for (int j = 0; j < r; ++j)
      theta(idx++) = std::clamp(std::log(std::max(l(j, j), 1e-300)), lo, hi);
    return;
  }
  for (int j = 0; j < r; ++j) {
    theta(idx++) = std::clamp(std::log(std::max(l(j, j), 1e-300)), lo, hi);
    for (int i = j + 1; i < r; ++i) theta(idx++) = l(i, j);
  }
}

// Permutation between the interleaved random-effect order used internally,
// u = (u_01, u_11, u_02, u_12, ...), and the reported (u_0 block, u_1 block).
inline Eigen::VectorXi interleave_to_blocks(int k) {
  Eigen::VectorXi perm(2 * k);
  for (int kk = 0; kk < k; ++kk) {
    perm(2 * kk) = kk;          // u_0 components first
    perm(2 * kk + 1) = k + kk;  // then u_1
  }
  return perm;
}

struct DevianceParts {
  double deviance = 0.0;
  Eigen::VectorXd v;
  Eigen::MatrixXd gls_info;
  double nw = 0.0;
};

// Profiled REML deviance exploiting the Kronecker structure: with the
// response stacked component-major, V_i = Sigma_delta (x) I_n + Z S_U Z'
// and Z = I_K (x) C_i, so every V_i operation reduces to K- and 2K-sized
// solves on the per-unit cross products.
inline DevianceParts reml_deviance(const Assembled& a, const Eigen::VectorXd& weights,
                                   const Eigen::MatrixXd& l_u, const Eigen::MatrixXd& l_d) {
  const int k = a.k;
  const int f = a.f;
  const int p = k * f;
  const int ru = 2 * k;
  DevianceParts out;

  Eigen::LLT<Eigen::MatrixXd> lld(l_d * l_d.transpose());
  // l_d is triangular with positive diagonal, so this cannot fail; the LLT
  // object just gives cheap solves.
  const Eigen::MatrixXd sd_inv = lld.solve(Eigen::MatrixXd::Identity(k, k));
  double logdet_sd = 0.0;
  for (int j = 0; j < k; ++j) logdet_sd += 2.0 * std::log(l_d(j, j));

  Eigen::MatrixXd sxx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd sxy = Eigen::VectorXd::Zero(p);
  double syy = 0.0;
  double logdet_v = 0.0;
  double nw = 0.0;

  Eigen::MatrixXd xax(p, p), xaz(p, ru), zaz(ru, ru);
  Eigen::VectorXd xay(p), zay(ru);

  for (std::size_t i = 0; i < a.stats.size(); ++i) {
    const auto& s = a.stats[i];
    const double wi = weights(static_cast<Eigen::Index>(i));
    if (wi == 0.0) continue;

    // Blocks of the A^-1-weighted cross products, A = Sigma_delta (x) I.
    for (int kk = 0; kk < k; ++kk)
      for (int k2 = 0; k2 < k; ++k2) {
        xax.block(kk * f, k2 * f, f, f) = sd_inv(kk, k2) * s.ftf;
        xaz.block(kk * f, k2 * 2, f, 2) = sd_inv(kk, k2) * s.ftc;
        zaz.block(kk * 2, k2 * 2, 2, 2) = sd_inv(kk, k2) * s.ctc;
      }
    const Eigen::MatrixXd fty_sd = s.fty * sd_inv;  // f x k
    const Eigen::MatrixXd cty_sd = s.cty * sd_inv;  // 2 x k
    for (int kk = 0; kk < k; ++kk) {
      xay.segment(kk * f, f) = fty_sd.col(kk);
      zay.segment(kk * 2, 2) = cty_sd.col(kk);
    }
    const double yay = (sd_inv * s.yty).trace();

    const Eigen::MatrixXd t =
        Eigen::MatrixXd::Identity(ru, ru) + l_u.transpose() * zaz * l_u;
    Eigen::LLT<Eigen::MatrixXd> llt(t);
    if (llt.info() != Eigen::Success) {
      out.deviance = std::numeric_limits<double>::infinity();
      return out;
    }
    const Eigen::MatrixXd lzx = l_u.transpose() * xaz.transpose();  // ru x p
    const Eigen::VectorXd lzy = l_u.transpose() * zay;
    const Eigen::MatrixXd t_lzx = llt.solve(lzx);
    const Eigen::VectorXd t_lzy = llt.solve(lzy);

    sxx += wi * (xax - lzx.transpose() * t_lzx);
    sxy += wi * (xay - lzx.transpose() * t_lzy);
    syy += wi * (yay - lzy.dot(t_lzy));
    double ld = 0.0;
    for (int j = 0; j < ru; ++j) ld += std::log(llt.matrixL()(j, j));
    logdet_v += wi * (s.n * logdet_sd + 2.0 * ld);
    nw += wi * (static_cast<double>(k) * s.n);
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(sxx);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    out.deviance = std::numeric_limits<double>::infinity();
    return out;
  }
  out.v = ldlt.solve(sxy);
  const double rss = std::max(syy - out.v.dot(sxy), 1e-300);
  const double logdet_sxx = ldlt.vectorD().array().cwiseMax(1e-300).log().sum();
  out.deviance = logdet_v + logdet_sxx + rss +
                 (nw - p) * std::log(2.0 * std::numbers::pi_v<double>);
  out.gls_info = sxx;
  out.nw = nw;
  return out;
}

}  // namespace mlmm_detail

// REML fit of the score model on the stacked representation. Scores must
// come with a matching CycleRecord (cycle index and covariates).
inline MlmmFit fit_mlmm(const std::vector<std::vector<ScoreVector>>& unit_scores,
                        const std::vector<const UnitData*>& units, const MlmmConfig& config,
                        const Eigen::VectorXd& weights) {
  const int n_units = static_cast<int>(units.size());
  if (n_units < 2) throw std::invalid_argument("fit_mlmm: need at least 2 units");
  if (unit_scores.size() != units.size() ||
      weights.size() != static_cast<Eigen::Index>(units.size()))
    throw std::invalid_argument("fit_mlmm: inputs misaligned");
  const int k = static_cast<int>(unit_scores.front().front().scores.size());
  const int m = static_cast<int>(config.covariates.size());
  const int f = 2 + m;

  mlmm_detail::Assembled a;
  a.k = k;
  a.f = f;

  // Canonical unit order (by id) so estimates do not depend on input order.
  std::vector<int> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return units[x]->unit_id < units[y]->unit_id; });
  Eigen::VectorXd sorted_weights(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    sorted_weights(static_cast<Eigen::Index>(i)) = weights(order[i]);

  Eigen::MatrixXd pooled_f(0, f);
  for (int oi = 0; oi < n_units; ++oi) {
    const int i = order[static_cast<std::size_t>(oi)];
    const UnitData& u = *units[i];
    const auto& scores = unit_scores[i];
    if (scores.size() != u.cycles.size() || scores.empty())
      throw std::invalid_argument("fit_mlmm: scores do not match cycle records for unit '" +
                                  u.unit_id + "'");
    const int n = static_cast<int>(scores.size());
    Eigen::MatrixXd fmat(n, f), cmat(n, 2), ymat(n, k);
    for (int c = 0; c < n; ++c) {
      if (scores[c].scores.size() != k)
        throw std::invalid_argument("fit_mlmm: inconsistent score length");
      const CycleRecord& rec = u.cycles[c];
      fmat(c, 0) = 1.0;
      fmat(c, 1) = static_cast<double>(rec.cycle);
      for (int h = 0; h < m; ++h) fmat(c, 2 + h) = rec.covariates.value(config.covariates[h]);
      cmat(c, 0) = 1.0;
      cmat(c, 1) = static_cast<double>(rec.cycle);
      ymat.row(c) = scores[c].scores.transpose();
    }
    if (!ymat.allFinite() || !fmat.allFinite())
      throw std::invalid_argument("fit_mlmm: non-finite design or response");
    mlmm_detail::UnitStats s;
    s.unit_id = u.unit_id;
    s.ftf = fmat.transpose() * fmat;
    s.ftc = fmat.transpose() * cmat;
    s.ctc = cmat.transpose() * cmat;
    s.fty = fmat.transpose() * ymat;
    s.cty = cmat.transpose() * ymat;
    s.yty = ymat.transpose() * ymat;
    s.n = n;
    a.stats.push_back(std::move(s));
    pooled_f.conservativeResize(pooled_f.rows() + n, f);
    pooled_f.bottomRows(n) = fmat;
  }

  // Rank check with column names so collinearity errors are actionable.
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(pooled_f);
    qr.setThreshold(1e-10);
    if (qr.rank() < f) {
      std::vector<std::string> names = {"intercept", "cycle"};
      for (const auto& c : config.covariates) names.push_back(c);
      std::string bad;
      for (int j = qr.rank(); j < f; ++j) {
        if (!bad.empty()) bad += ", ";
        bad += names[qr.colsPermutation().indices()(j)];
      }
      throw std::invalid_argument("fit_mlmm: singular design; collinear columns: " + bad);
    }
  }

  const int ru = 2 * k;
  const double lo = config.log_diag_min;
  const double hi = config.log_diag_max;
  const int nu_params =
      config.diagonal_sigma_u ? ru : mlmm_detail::tri_size(ru);
  const int nd_params = mlmm_detail::tri_size(k);

  // Starting values: per-component OLS residual moments.
  Eigen::MatrixXd sigma_delta0 = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd sigma_u0 = Eigen::MatrixXd::Zero(ru, ru);
  {
    Eigen::MatrixXd ftf_sum = Eigen::MatrixXd::Zero(f, f);
    Eigen::MatrixXd fty_sum = Eigen::MatrixXd::Zero(f, k);
    for (const auto& s : a.stats) {
      ftf_sum += s.ftf;
      fty_sum += s.fty;
    }
    const Eigen::MatrixXd beta = ftf_sum.ldlt().solve(fty_sum);  // f x k
    double n_total = 0.0;
    Eigen::MatrixXd resid_ss = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd coef_ss = Eigen::MatrixXd::Zero(ru, ru);
    int used = 0;
    for (const auto& s : a.stats) {
      // E[(Y - F beta)'(Y - F beta)] from cross products
      resid_ss += s.yty - s.fty.transpose() * beta - beta.transpose() * s.fty +
                  beta.transpose() * s.ftf * beta;
      n_total += s.n;
      if (s.n > 2) {
        const Eigen::MatrixXd ctc_reg =
            s.ctc + 1e-8 * Eigen::MatrixXd::Identity(2, 2);
        // per-unit regression of residual scores on (1, c), interleaved
        // order; C'(Y - F beta) = C'Y - (F'C)' beta.
        const Eigen::MatrixXd ctf_beta = s.ftc.transpose() * beta;  // 2 x k
        const Eigen::MatrixXd d = ctc_reg.ldlt().solve(s.cty - ctf_beta);
        Eigen::VectorXd di(ru);
        for (int kk = 0; kk < k; ++kk) di.segment(kk * 2, 2) = d.col(kk);
        coef_ss += di * di.transpose();
        ++used;
      }
    }
    sigma_delta0 = resid_ss / std::max(n_total - f, 1.0);
    sigma_delta0 += 1e-6 * Eigen::MatrixXd::Identity(k, k);
    sigma_u0 = used > 0 ? Eigen::MatrixXd(coef_ss / used)
                        : Eigen::MatrixXd(Eigen::MatrixXd::Identity(ru, ru) * 0.01);
    sigma_u0 += 1e-6 * Eigen::MatrixXd::Identity(ru, ru);
  }

  // Exact interpolation (noiseless scores) degenerates the variance surface;
  // report the exact per-component OLS solution directly.
  {
    Eigen::MatrixXd ftf_sum = Eigen::MatrixXd::Zero(f, f);
    Eigen::MatrixXd fty_sum = Eigen::MatrixXd::Zero(f, k);
    Eigen::MatrixXd yty_sum = Eigen::MatrixXd::Zero(k, k);
    double n_total = 0.0;
    for (const auto& s : a.stats) {
      ftf_sum += s.ftf;
      fty_sum += s.fty;
      yty_sum += s.yty;
      n_total += s.n;
    }
    const Eigen::MatrixXd beta = ftf_sum.ldlt().solve(fty_sum);
    const double rss = (yty_sum - fty_sum.transpose() * beta).trace();
    const double total = std::max(yty_sum.trace(), 1e-300);
    if (rss / total < 1e-20) {
      MlmmFit fit;
      fit.k = k;
      fit.covariates = config.covariates;
      fit.v0 = beta.row(0).transpose();
      fit.v1 = beta.row(1).transpose();
      fit.p = beta.bottomRows(m).transpose();
      fit.v_cov = Eigen::MatrixXd::Zero(k * f, k * f);
      fit.v_se = Eigen::VectorXd::Zero(k * f);
      fit.sigma_u = Eigen::MatrixXd::Zero(ru, ru);
      fit.sigma_delta = (yty_sum - fty_sum.transpose() * beta).cwiseMax(0.0) /
                        std::max(n_total - f, 1.0);
      for (const auto& s : a.stats) {
        MlmmFit::Blup b;
        b.unit_id = s.unit_id;
        b.u0 = Eigen::VectorXd::Zero(k);
        b.u1 = Eigen::VectorXd::Zero(k);
        fit.blups.push_back(std::move(b));
      }
      fit.converged = true;
      fit.iterations = 0;
      fit.loglik_reml = 0.0;
      fit.deviance_trace = {0.0};
      return fit;
    }
  }

  Eigen::VectorXd theta0(nu_params + nd_params);
  {
    int idx = 0;
    mlmm_detail::pack_lower(sigma_u0, lo, hi, config.diagonal_sigma_u, theta0, idx);
    mlmm_detail::pack_lower(sigma_delta0, lo, hi, false, theta0, idx);
  }

  const auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::MatrixXd l_u =
        mlmm_detail::unpack_lower(theta, 0, ru, lo, hi, config.diagonal_sigma_u);
    const Eigen::MatrixXd l_d =
        mlmm_detail::unpack_lower(theta, nu_params, k, lo, hi, false);
    return mlmm_detail::reml_deviance(a, sorted_weights, l_u, l_d).deviance;
  };

  OptimResult opt = minimize_bfgs(objective, theta0, config.optim);

  const Eigen::MatrixXd l_u =
      mlmm_detail::unpack_lower(opt.x, 0, ru, lo, hi, config.diagonal_sigma_u);
  const Eigen::MatrixXd l_d = mlmm_detail::unpack_lower(opt.x, nu_params, k, lo, hi, false);
  const auto parts = mlmm_detail::reml_deviance(a, sorted_weights, l_u, l_d);

  MlmmFit fit;
  fit.k = k;
  fit.covariates = config.covariates;
  fit.v0.resize(k);
  fit.v1.resize(k);
  fit.p.resize(k, m);
  for (int kk = 0; kk < k; ++kk) {
    fit.v0(kk) = parts.v(kk * f + 0);
    fit.v1(kk) = parts.v(kk * f + 1);
    for (int h = 0; h < m; ++h) fit.p(kk, h) = parts.v(kk * f + 2 + h);
  }
  fit.v_cov = parts.gls_info.inverse();
  fit.v_se = fit.v_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.sigma_delta = l_d * l_d.transpose();
  const Eigen::MatrixXd sigma_u_interleaved = l_u * l_u.transpose();
  const Eigen::VectorXi perm = mlmm_detail::interleave_to_blocks(k);
  fit.sigma_u.resize(ru, ru);
  for (int i = 0; i < ru; ++i)
    for (int j = 0; j < ru; ++j) {
      // perm maps interleaved position -> block position
      int pi = (i % 2 == 0) ? (i / 2) : (k + i / 2);
      int pj = (j % 2 == 0) ? (j / 2) : (k + j / 2);
      fit.sigma_u(pi, pj) = sigma_u_interleaved(i, j);
    }
  fit.loglik_reml = -0.5 * parts.deviance;
  fit.converged = opt.converged;
  fit.iterations = opt.iterations;
  fit.deviance_trace = opt.trace;

  // BLUPs: u_i = S_U Z' V^-1 (y_i - X v) = L_U T^-1 L_U' Z'A^-1 r_i with the
  // same Woodbury pieces as the deviance.
  const Eigen::MatrixXd sd_inv =
      (l_d * l_d.transpose()).llt().solve(Eigen::MatrixXd::Identity(k, k));
  for (const auto& s : a.stats) {
    Eigen::MatrixXd zaz(ru, ru), zax(ru, k * f);
    for (int kk = 0; kk < k; ++kk)
      for (int k2 = 0; k2 < k; ++k2) {
        zaz.block(kk * 2, k2 * 2, 2, 2) = sd_inv(kk, k2) * s.ctc;
        zax.block(kk * 2, k2 * f, 2, f) = sd_inv(kk, k2) * s.ftc.transpose();
      }
    const Eigen::MatrixXd cty_sd = s.cty * sd_inv;
    Eigen::VectorXd zay(ru);
    for (int kk = 0; kk < k; ++kk) zay.segment(kk * 2, 2) = cty_sd.col(kk);
    const Eigen::MatrixXd t =
        Eigen::MatrixXd::Identity(ru, ru) + l_u.transpose() * zaz * l_u;
    const Eigen::VectorXd rhs = l_u.transpose() * (zay - zax * parts.v);
    const Eigen::VectorXd u = l_u * t.llt().solve(rhs);
    MlmmFit::Blup b;
    b.unit_id = s.unit_id;
    b.u0.resize(k);
    b.u1.resize(k);
    for (int kk = 0; kk < k; ++kk) {
      b.u0(kk) = u(kk * 2);
      b.u1(kk) = u(kk * 2 + 1);
    }
    fit.blups.push_back(std::move(b));
  }
  return fit;
}

inline MlmmFit fit_mlmm(const std::vector<std::vector<ScoreVector>>& unit_scores,
                        const std::vector<const UnitData*>& units, const MlmmConfig& config) {
  return fit_mlmm(unit_scores, units, config,
                  Eigen::VectorXd::Ones(static_cast<Eigen::Index>(units.size())));
}

// Score prediction for a (possibly future) cycle. Population level drops the
// unit's random effects.
inline Eigen::VectorXd predict_scores(const MlmmFit& fit, const std::string& unit_id, double cycle,
                                      const CovariateVector& z, bool population = false) {
  Eigen::VectorXd zv(fit.covariates.size());
  for (std::size_t h = 0; h < fit.covariates.size(); ++h) zv(h) = z.value(fit.covariates[h]);
  Eigen::VectorXd gamma = fit.v0 + fit.v1 * cycle + fit.p * zv;
  if (!population) {
    const auto& b = fit.blup(unit_id);  // throws for unknown units
    gamma += b.u0 + b.u1 * cycle;
  }
  return gamma;
}

}  // namespace fdm
