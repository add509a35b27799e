#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/covariates.hpp"
#include "fdm/lme.hpp"
#include "fdm/types.hpp"

namespace fdm {

// Model terms resolvable against a cycle record. PrevEod / PrevDegradation
// are the autoregressive lags; at prediction time they switch from observed
// values to the model's own previous output.
enum class TermKind { Cycle, PrevEod, Rest, Covariate, PrevDegradation };

struct Term {
  TermKind kind = TermKind::Covariate;
  std::string name;  // covariate name when kind == Covariate

  static Term cycle() { return {TermKind::Cycle, ""}; }
  static Term prev_eod() { return {TermKind::PrevEod, ""}; }
  static Term rest() { return {TermKind::Rest, ""}; }
  static Term covariate(std::string n) { return {TermKind::Covariate, std::move(n)}; }
  static Term prev_degradation() { return {TermKind::PrevDegradation, ""}; }

  std::string label() const {
    switch (kind) {
      case TermKind::Cycle: return "cycle";
      case TermKind::PrevEod: return "prev_eod";
      case TermKind::Rest: return "rest";
      case TermKind::PrevDegradation: return "prev_deg";
      case TermKind::Covariate: return name;
    }
    return "?";
  }

  bool operator==(const Term&) const = default;
};

struct TermContext {
  double cycle = 0.0;
  double rest_h = 0.0;
  double prev_eod = 0.0;
  double prev_degradation = 0.0;
  const CovariateVector* covariates = nullptr;
};

inline double term_value(const Term& t, const TermContext& ctx) {
  switch (t.kind) {
    case TermKind::Cycle: return ctx.cycle;
    case TermKind::PrevEod: return ctx.prev_eod;
    case TermKind::Rest: return rest_covariate(ctx.rest_h);
    case TermKind::PrevDegradation: return ctx.prev_degradation;
    case TermKind::Covariate:
      if (!ctx.covariates) throw std::invalid_argument("term_value: no covariates in context");
      return ctx.covariates->value(t.name);
  }
  throw std::logic_error("term_value: unreachable");
}

inline TermContext context_for(const CycleRecord& rec) {
  TermContext ctx;
  ctx.cycle = static_cast<double>(rec.cycle);
  ctx.rest_h = rec.rest_h;
  ctx.prev_eod = rec.prev_eod_s;
  ctx.covariates = &rec.covariates;
  return ctx;
}

// Covariate role assignment for the EOD mixed models: random_slopes get both
// fixed and per-unit random coefficients (z_1), fixed_only get fixed
// coefficients only (z_2). The intercept always carries both.
struct EodFormula {
  std::vector<Term> random_slopes;
  std::vector<Term> fixed_only;

  int n_fixed() const {
    return 1 + static_cast<int>(random_slopes.size() + fixed_only.size());
  }
  int n_random() const { return 1 + static_cast<int>(random_slopes.size()); }

  std::vector<std::string> coef_names() const {
    std::vector<std::string> names = {"intercept"};
    for (const auto& t : random_slopes) names.push_back(t.label());
    for (const auto& t : fixed_only) names.push_back(t.label());
    return names;
  }

  Eigen::VectorXd fixed_row(const TermContext& ctx) const {
    Eigen::VectorXd g(n_fixed());
    g(0) = 1.0;
    int j = 1;
    for (const auto& t : random_slopes) g(j++) = term_value(t, ctx);
    for (const auto& t : fixed_only) g(j++) = term_value(t, ctx);
    return g;
  }

  Eigen::VectorXd random_row(const TermContext& ctx) const {
    Eigen::VectorXd h(n_random());
    h(0) = 1.0;
    int j = 1;
    for (const auto& t : random_slopes) h(j++) = term_value(t, ctx);
    return h;
  }

  // Simulation-style model: random cycle slope; lag, rest and a unit
  // condition as fixed-only covariates.
  static EodFormula standard(const std::vector<std::string>& unit_covariates) {
    EodFormula f;
    f.random_slopes = {Term::cycle()};
    f.fixed_only = {Term::prev_eod(), Term::rest()};
    for (const auto& c : unit_covariates) f.fixed_only.push_back(Term::covariate(c));
    return f;
  }

  // Full-data style: random slopes on cycle and the lag as well.
  static EodFormula autoregressive_random(const std::vector<std::string>& unit_covariates) {
    EodFormula f;
    f.random_slopes = {Term::cycle(), Term::prev_eod()};
    f.fixed_only = {Term::rest()};
    for (const auto& c : unit_covariates) f.fixed_only.push_back(Term::covariate(c));
    return f;
  }
};

struct LmeEodFit {
  EodFormula formula;
  std::vector<std::string> coef_names;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_se;
  Eigen::MatrixXd psi;  // scaled random-effect covariance
  double sigma2_eps = 0.0;
  std::vector<std::string> unit_ids;
  std::vector<Eigen::VectorXd> blups;
  double loglik_reml = 0.0;
  bool converged = false;
  int iterations = 0;

  const Eigen::VectorXd& blup(const std::string& unit_id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i)
      if (unit_ids[i] == unit_id) return blups[i];
    throw std::invalid_argument("LmeEodFit: no BLUP for unit '" + unit_id + "'");
  }

  bool has_unit(const std::string& unit_id) const {
    for (const auto& id : unit_ids)
      if (id == unit_id) return true;
    return false;
  }
};

inline lme::UnitBlock eod_unit_block(const UnitData& unit, const EodFormula& formula) {
  const int n = unit.n_cycles();
  lme::UnitBlock b;
  b.unit_id = unit.unit_id;
  b.x.resize(n, formula.n_fixed());
  b.z.resize(n, formula.n_random());
  b.y.resize(n);
  for (int c = 0; c < n; ++c) {
    const TermContext ctx = context_for(unit.cycles[c]);
    b.x.row(c) = formula.fixed_row(ctx).transpose();
    b.z.row(c) = formula.random_row(ctx).transpose();
    b.y(c) = unit.cycles[c].eod_s;
  }
  return b;
}

namespace detail {

inline void check_design_rank(const std::vector<lme::UnitBlock>& blocks,
                              const std::vector<std::string>& names, const char* where) {
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.x.rows();
  Eigen::MatrixXd pooled(rows, blocks.front().x.cols());
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    pooled.middleRows(at, b.x.rows()) = b.x;
    at += b.x.rows();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(pooled);
  qr.setThreshold(1e-10);
  if (qr.rank() < pooled.cols()) {
    std::string bad;
    for (Eigen::Index j = qr.rank(); j < pooled.cols(); ++j) {
      if (!bad.empty()) bad += ", ";
      bad += names[static_cast<std::size_t>(qr.colsPermutation().indices()(j))];
    }
    throw std::invalid_argument(std::string(where) + ": singular design; collinear columns: " +
                                bad);
  }
}

}  // namespace detail

inline LmeEodFit fit_lme_eod(const std::vector<const UnitData*>& units, const EodFormula& formula,
                             const Eigen::VectorXd& weights, const lme::LmeOptions& options = {}) {
  if (units.size() < 2) throw std::invalid_argument("fit_lme_eod: need at least 2 units");
  std::vector<lme::UnitBlock> blocks;
  blocks.reserve(units.size());
  for (const UnitData* u : units) {
    if (u->cycles.empty()) throw std::invalid_argument("fit_lme_eod: unit without cycles");
    blocks.push_back(eod_unit_block(*u, formula));
  }
  detail::check_design_rank(blocks, formula.coef_names(), "fit_lme_eod");

  const lme::LmeFit base = lme::fit(blocks, weights, options);
  LmeEodFit fit;
  fit.formula = formula;
  fit.coef_names = formula.coef_names();
  fit.alpha = base.alpha;
  fit.alpha_se = base.alpha_se;
  fit.psi = base.psi;
  fit.sigma2_eps = base.sigma2;
  fit.unit_ids = base.unit_ids;
  fit.blups = base.blups;
  fit.loglik_reml = base.loglik_reml;
  fit.converged = base.converged;
  fit.iterations = base.iterations;
  return fit;
}

inline LmeEodFit fit_lme_eod(const std::vector<const UnitData*>& units, const EodFormula& formula,
                             const lme::LmeOptions& options = {}) {
  return fit_lme_eod(units, formula,
                     Eigen::VectorXd::Ones(static_cast<Eigen::Index>(units.size())), options);
}

// Linear predictor for one cycle, with the unit's random effects unless
// population-level prediction is requested.
inline double eod_predictor(const LmeEodFit& fit, const std::string& unit_id,
                            const TermContext& ctx, bool population = false) {
  double value = fit.formula.fixed_row(ctx).dot(fit.alpha);
  if (!population) value += fit.formula.random_row(ctx).dot(fit.blup(unit_id));
  return value;
}

// Fitted EODs on observed records (lags taken from the data).
inline std::vector<double> fitted_eod(const LmeEodFit& fit, const UnitData& unit,
                                      bool population = false) {
  std::vector<double> out;
  out.reserve(unit.cycles.size());
  for (const auto& rec : unit.cycles)
    out.push_back(eod_predictor(fit, unit.unit_id, context_for(rec), population));
  return out;
}

struct FutureCycle {
  int cycle = 0;
  double rest_h = 0.0;
  CovariateVector covariates;
};

// Recursive multi-step prediction: the lag covariate uses the last observed
// EOD once, then the model's own previous prediction.
inline std::vector<double> predict_eod_path(const LmeEodFit& fit, const std::string& unit_id,
                                            int last_history_cycle, double last_observed_eod,
                                            const std::vector<FutureCycle>& horizon,
                                            bool population = false) {
  std::vector<double> out;
  out.reserve(horizon.size());
  double lag = last_observed_eod;
  int expected = last_history_cycle + 1;
  for (const auto& fc : horizon) {
    if (fc.cycle != expected)
      throw std::invalid_argument("predict_eod_path: horizon must start right after the history "
                                  "and be contiguous");
    TermContext ctx;
    ctx.cycle = static_cast<double>(fc.cycle);
    ctx.rest_h = fc.rest_h;
    ctx.prev_eod = lag;
    ctx.covariates = &fc.covariates;
    const double pred = eod_predictor(fit, unit_id, ctx, population);
    out.push_back(pred);
    lag = pred;
    ++expected;
  }
  return out;
}

}  // namespace fdm
