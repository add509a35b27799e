#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/eod.hpp"
#include "fdm/lme.hpp"
#include "fdm/optim.hpp"
#include "fdm/types.hpp"

namespace fdm {

// General path model fit directly to degradation amounts:
//   d_ic = beta0 + (beta1 + xi_i) c + z_ic' beta_z + eps_ic       (linear-normal)
//   d_ic = beta0 + beta1 exp(zeta_i) c + z_ic' beta_z + eps_ic    (linear-lognormal)
// One random parameter per unit (the slope); covariates usually include the
// lagged degradation, the rest covariate and test conditions.

enum class GpmForm { LinearNormal, LinearLognormal };

struct GpmConfig {
  std::vector<Term> covariates;  // beta_z terms
  GpmForm form = GpmForm::LinearNormal;
  lme::LmeOptions lme;
  OptimOptions optim;  // lognormal Laplace fit
};

struct GpmFit {
  GpmForm form = GpmForm::LinearNormal;
  std::vector<Term> covariates;
  std::vector<std::string> coef_names;
  double beta0 = 0.0;
  double beta1 = 0.0;
  Eigen::VectorXd beta_z;
  double sigma2_xi = 0.0;   // variance of xi (normal) or zeta (lognormal)
  double sigma2_eps = 0.0;
  std::vector<std::string> unit_ids;
  Eigen::VectorXd xi;  // per-unit random effect (BLUP / posterior mode)
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;

  double unit_effect(const std::string& unit_id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i)
      if (unit_ids[i] == unit_id) return xi(static_cast<Eigen::Index>(i));
    throw std::invalid_argument("GpmFit: unknown unit '" + unit_id + "'");
  }
};

// One unit's degradation series plus everything its covariate terms need.
struct GpmUnit {
  std::string unit_id;
  std::vector<int> cycles;
  std::vector<double> d;
  std::vector<double> rest_h;
  std::vector<CovariateVector> covariates;

  int size() const { return static_cast<int>(d.size()); }
};

namespace gpm_detail {

inline TermContext context_at(const GpmUnit& u, int idx) {
  TermContext ctx;
  ctx.cycle = static_cast<double>(u.cycles[idx]);
  ctx.rest_h = u.rest_h[idx];
  // lag convention mirrors the EOD models: zero before the first cycle
  ctx.prev_degradation = idx == 0 ? 0.0 : u.d[idx - 1];
  ctx.covariates = &u.covariates[idx];
  return ctx;
}

inline Eigen::MatrixXd design(const GpmUnit& u, const std::vector<Term>& covs) {
  const int m = static_cast<int>(covs.size());
  Eigen::MatrixXd x(u.size(), 2 + m);
  for (int i = 0; i < u.size(); ++i) {
    const TermContext ctx = context_at(u, i);
    x(i, 0) = 1.0;
    x(i, 1) = ctx.cycle;
    for (int h = 0; h < m; ++h) x(i, 2 + h) = term_value(covs[h], ctx);
  }
  return x;
}

}  // namespace gpm_detail

inline GpmFit fit_gpm(const std::vector<GpmUnit>& units, const GpmConfig& config,
                      const Eigen::VectorXd& weights) {
  if (units.size() < 2) throw std::invalid_argument("fit_gpm: need at least 2 units");
  if (weights.size() != static_cast<Eigen::Index>(units.size()))
    throw std::invalid_argument("fit_gpm: weight length mismatch");

  std::vector<std::string> names = {"intercept", "cycle"};
  for (const auto& t : config.covariates) names.push_back(t.label());

  // linear-normal backbone; also the starting point for the lognormal form
  std::vector<lme::UnitBlock> blocks;
  for (const auto& u : units) {
    lme::UnitBlock b;
    b.unit_id = u.unit_id;
    b.x = gpm_detail::design(u, config.covariates);
    b.z.resize(u.size(), 1);
    for (int i = 0; i < u.size(); ++i) b.z(i, 0) = static_cast<double>(u.cycles[i]);
    b.y = Eigen::Map<const Eigen::VectorXd>(u.d.data(), u.size());
    blocks.push_back(std::move(b));
  }
  detail::check_design_rank(blocks, names, "fit_gpm");
  const lme::LmeFit normal = lme::fit(blocks, weights, config.lme);

  GpmFit fit;
  fit.form = config.form;
  fit.covariates = config.covariates;
  fit.coef_names = names;
  fit.beta0 = normal.alpha(0);
  fit.beta1 = normal.alpha(1);
  fit.beta_z = normal.alpha.tail(normal.alpha.size() - 2);
  fit.sigma2_eps = normal.sigma2;
  fit.sigma2_xi = normal.sigma2 * normal.psi(0, 0);
  fit.unit_ids = normal.unit_ids;
  fit.xi.resize(static_cast<Eigen::Index>(normal.blups.size()));
  for (std::size_t i = 0; i < normal.blups.size(); ++i) fit.xi(i) = normal.blups[i](0);
  fit.loglik = normal.loglik_reml;
  fit.converged = normal.converged;
  fit.iterations = normal.iterations;
  if (config.form == GpmForm::LinearNormal) return fit;

  // Linear-lognormal: Laplace-approximate marginal likelihood over
  // (beta, log sigma_eps, log sigma_zeta) with an inner per-unit mode search.
  const int m = static_cast<int>(config.covariates.size());
  const int p = 2 + m;

  struct UnitArrays {
    Eigen::MatrixXd x;
    Eigen::VectorXd y, c;
  };
  std::vector<UnitArrays> arrays;
  for (const auto& b : blocks) arrays.push_back({b.x, b.y, b.z.col(0)});

  const auto unit_mode = [&](const UnitArrays& u, const Eigen::VectorXd& beta, double b1,
                             double s2e, double s2z) {
    // Newton on h(zeta) with bisection safeguard
    const Eigen::VectorXd base = u.y - u.x * beta + b1 * u.c;  // add back to swap in b1 e^z c
    double zeta = 0.0;
    for (int it = 0; it < 60; ++it) {
      const double s = b1 * std::exp(zeta);
      const Eigen::VectorXd resid = base - s * u.c;
      const double g = (s / s2e) * u.c.dot(resid) - zeta / s2z;
      const double h = (s / s2e) * u.c.dot(resid) - (s * s / s2e) * u.c.squaredNorm() -
                       1.0 / s2z;
      if (!(h < 0.0)) break;
      const double step = g / h;
      double next = zeta - step;
      next = std::clamp(next, -12.0, 12.0);
      if (std::abs(next - zeta) < 1e-12) {
        zeta = next;
        break;
      }
      zeta = next;
    }
    return zeta;
  };

  const auto laplace_negloglik = [&](const Eigen::VectorXd& par, Eigen::VectorXd* modes) {
    const Eigen::VectorXd beta = par.head(p);
    const double s2e = std::exp(2.0 * std::clamp(par(p), -20.0, 20.0));
    const double s2z = std::exp(2.0 * std::clamp(par(p + 1), -20.0, 20.0));
    double total = 0.0;
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const double wi = weights(static_cast<Eigen::Index>(i));
      if (wi == 0.0) continue;
      const auto& u = arrays[i];
      const double b1 = beta(1);
      const double zeta = unit_mode(u, beta, b1, s2e, s2z);
      if (modes) (*modes)(static_cast<Eigen::Index>(i)) = zeta;
      const double s = b1 * std::exp(zeta);
      const Eigen::VectorXd resid = (u.y - u.x * beta) + b1 * u.c - s * u.c;
      const double h_val = -0.5 * resid.squaredNorm() / s2e - 0.5 * zeta * zeta / s2z;
      const double h_dd = (s / s2e) * u.c.dot(resid) - (s * s / s2e) * u.c.squaredNorm() -
                          1.0 / s2z;
      const double n = static_cast<double>(u.y.size());
      double ll = h_val - 0.5 * n * std::log(2.0 * std::numbers::pi_v<double> * s2e) -
                  0.5 * std::log(s2z) - 0.5 * std::log(std::max(-h_dd, 1e-300));
      total += wi * ll;
    }
    return -total;
  };

  Eigen::VectorXd par0(p + 2);
  par0.head(p) = normal.alpha;
  par0(p) = 0.5 * std::log(std::max(normal.sigma2, 1e-12));
  const double zeta_scale =
      std::sqrt(std::max(fit.sigma2_xi, 1e-12)) / std::max(std::abs(fit.beta1), 1e-6);
  par0(p + 1) = std::log(std::clamp(zeta_scale, 1e-4, 10.0));

  const OptimResult opt = minimize_bfgs(
      [&](const Eigen::VectorXd& par) { return laplace_negloglik(par, nullptr); }, par0,
      config.optim);

  Eigen::VectorXd modes(static_cast<Eigen::Index>(units.size()));
  const double nll = laplace_negloglik(opt.x, &modes);

  fit.beta0 = opt.x(0);
  fit.beta1 = opt.x(1);
  fit.beta_z = opt.x.segment(2, m);
  fit.sigma2_eps = std::exp(2.0 * opt.x(p));
  fit.sigma2_xi = std::exp(2.0 * opt.x(p + 1));  // variance of zeta
  fit.xi = modes;
  fit.loglik = -nll;
  fit.converged = opt.converged;
  fit.iterations = opt.iterations;
  return fit;
}

inline GpmFit fit_gpm(const std::vector<GpmUnit>& units, const GpmConfig& config) {
  return fit_gpm(units, config, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(units.size())));
}

inline double gpm_predictor(const GpmFit& fit, const std::string& unit_id,
                            const TermContext& ctx, bool population = false) {
  double slope = fit.beta1;
  if (fit.form == GpmForm::LinearNormal) {
    if (!population) slope += fit.unit_effect(unit_id);
  } else {
    slope *= std::exp(population ? 0.0 : fit.unit_effect(unit_id));
  }
  double value = fit.beta0 + slope * ctx.cycle;
  for (std::size_t h = 0; h < fit.covariates.size(); ++h)
    value += fit.beta_z(static_cast<Eigen::Index>(h)) * term_value(fit.covariates[h], ctx);
  return value;
}

// Fitted values over a unit's observed series (lags from the data).
inline std::vector<double> fitted_gpm(const GpmFit& fit, const GpmUnit& unit,
                                      bool population = false) {
  std::vector<double> out;
  out.reserve(unit.d.size());
  for (int i = 0; i < unit.size(); ++i)
    out.push_back(gpm_predictor(fit, unit.unit_id, gpm_detail::context_at(unit, i), population));
  return out;
}

// Recursive multi-step prediction with the lagged degradation plugged in
// from the previous prediction, mirroring the EOD convention.
inline std::vector<double> predict_gpm(const GpmFit& fit, const std::string& unit_id,
                                       int last_history_cycle, double last_observed_d,
                                       const std::vector<FutureCycle>& horizon,
                                       bool population = false) {
  std::vector<double> out;
  out.reserve(horizon.size());
  double lag = last_observed_d;
  int expected = last_history_cycle + 1;
  for (const auto& fc : horizon) {
    if (fc.cycle != expected)
      throw std::invalid_argument("predict_gpm: horizon must continue the history contiguously");
    TermContext ctx;
    ctx.cycle = static_cast<double>(fc.cycle);
    ctx.rest_h = fc.rest_h;
    ctx.prev_degradation = lag;
    ctx.covariates = &fc.covariates;
    const double pred = gpm_predictor(fit, unit_id, ctx, population);
    out.push_back(pred);
    lag = pred;
    ++expected;
  }
  return out;
}

}  // namespace fdm
