#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/bspline.hpp"
#include "fdm/eod.hpp"
#include "fdm/grid.hpp"
#include "fdm/rng.hpp"
#include "fdm/types.hpp"

namespace fdm {

// Functional linear mixed model for EODs: the scalar mixed model of eod.hpp
// plus a functional covariate int (beta(t) + b_i(t)) x_ic(t) dt, with beta
// and the per-unit b_i expanded in penalized B-spline bases.

// Quadrature of x(t) against every basis function (trapezoid on the grid).
inline Eigen::VectorXd functional_design_terms(const ScaledCurve& curve,
                                               const BSplineBasis& basis) {
  const int g = curve.grid_size();
  if (g < 2) throw std::invalid_argument("functional_design_terms: degenerate curve");
  const Eigen::VectorXd w = trapezoid_weights(g);
  const Eigen::MatrixXd bmat = basis.evaluate_matrix(unit_grid(g));
  return bmat.transpose() * (w.array() * curve.values.array()).matrix();
}

struct FlmmOptions {
  int beta_basis_size = 10;  // R
  int unit_basis_size = 10;  // S
  int basis_degree = 3;
  // fixed smoothing parameters; leave unset to select by cross validation
  std::optional<std::pair<double, double>> lambdas;
  int cv_folds = 5;
  int cv_grid_points = 7;
  double cv_lambda_min = 1e-4;
  double cv_lambda_max = 1e2;
  bool cv_by_unit = false;  // default: folds split cycles within units
  std::uint64_t cv_seed = 1;
  int max_em_iterations = 200;
  double em_tol = 1e-6;
};

struct FlmmEodFit {
  EodFormula formula;
  std::vector<std::string> coef_names;
  Eigen::VectorXd alpha;        // fixed scalar coefficients
  Eigen::VectorXd p;            // spline coefficients of beta(t)
  int beta_basis_size = 10;
  int unit_basis_size = 10;
  int basis_degree = 3;
  Eigen::MatrixXd psi;          // scaled covariance of w_i
  Eigen::MatrixXd d;            // scaled covariance of q_i
  double sigma2_eps = 0.0;
  double lambda_beta = 0.0;
  double lambda_b = 0.0;
  Eigen::MatrixXd g_phi, g_psi;  // curvature penalty matrices
  std::vector<std::string> unit_ids;
  std::vector<Eigen::VectorXd> w_blups;  // per-unit scalar random effects
  std::vector<Eigen::VectorXd> q_blups;  // per-unit spline coefficients
  struct EmStep {
    double objective_before = 0.0;
    double objective_after = 0.0;
  };
  std::vector<EmStep> em_trace;
  bool converged = false;
  int iterations = 0;

  BSplineBasis beta_basis() const { return BSplineBasis(beta_basis_size, basis_degree); }
  BSplineBasis unit_basis() const { return BSplineBasis(unit_basis_size, basis_degree); }

  Eigen::VectorXd beta_on_grid(int grid_size) const {
    return beta_basis().evaluate_matrix(unit_grid(grid_size)) * p;
  }

  const Eigen::VectorXd& w_blup(const std::string& unit_id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i)
      if (unit_ids[i] == unit_id) return w_blups[i];
    throw std::invalid_argument("FlmmEodFit: no random effects for unit '" + unit_id + "'");
  }
  const Eigen::VectorXd& q_blup(const std::string& unit_id) const {
    for (std::size_t i = 0; i < unit_ids.size(); ++i)
      if (unit_ids[i] == unit_id) return q_blups[i];
    throw std::invalid_argument("FlmmEodFit: no random effects for unit '" + unit_id + "'");
  }
};

namespace flmm_detail {

struct UnitDesign {
  std::string unit_id;
  Eigen::MatrixXd gt;  // n x (p_g + R): scalar fixed row, then functional j
  Eigen::MatrixXd ht;  // n x (r_h + S): scalar random row, then functional k
  Eigen::VectorXd b;
};

struct UnitStats {
  Eigen::MatrixXd gtg, gth, hth;
  Eigen::VectorXd gtb, htb;
  double btb = 0.0;
  int n = 0;
};

inline UnitStats make_stats(const UnitDesign& u) {
  UnitStats s;
  s.gtg = u.gt.transpose() * u.gt;
  s.gth = u.gt.transpose() * u.ht;
  s.hth = u.ht.transpose() * u.ht;
  s.gtb = u.gt.transpose() * u.b;
  s.htb = u.ht.transpose() * u.b;
  s.btb = u.b.squaredNorm();
  s.n = static_cast<int>(u.b.size());
  return s;
}

struct EmState {
  Eigen::VectorXd theta;                // (alpha, p)
  std::vector<Eigen::VectorXd> vartheta;  // per-unit (w_i, q_i)
  Eigen::MatrixXd psi, d;
  double sigma2 = 1.0;
  std::vector<FlmmEodFit::EmStep> trace;
  bool converged = false;
  int iterations = 0;
};

// Penalized objective; the per-iteration monotonicity assertion evaluates
// exactly this at fixed variance components.
inline double objective(const std::vector<UnitStats>& stats, const EmState& st,
                        const Eigen::MatrixXd& g_phi, const Eigen::MatrixXd& g_psi,
                        double lambda_beta, double lambda_b, int pg, int rh) {
  const int r = static_cast<int>(g_phi.rows());
  const int s = static_cast<int>(g_psi.rows());
  const Eigen::VectorXd p = st.theta.tail(r);
  Eigen::LLT<Eigen::MatrixXd> psi_llt(st.psi);
  Eigen::LLT<Eigen::MatrixXd> d_llt(st.d);
  double value = 0.5 * lambda_beta * p.dot(g_phi * p);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const UnitStats& u = stats[i];
    const Eigen::VectorXd& vt = st.vartheta[i];
    const double rss = u.btb - 2.0 * st.theta.dot(u.gtb) - 2.0 * vt.dot(u.htb) +
                       2.0 * st.theta.dot(u.gth * vt) + st.theta.dot(u.gtg * st.theta) +
                       vt.dot(u.hth * vt);
    const Eigen::VectorXd w = vt.head(rh);
    const Eigen::VectorXd q = vt.tail(s);
    value += 0.5 * rss / st.sigma2;
    value += 0.5 * lambda_b * q.dot(g_psi * q);
    value += 0.5 * q.dot(d_llt.solve(q)) / st.sigma2;
    value += 0.5 * w.dot(psi_llt.solve(w)) / st.sigma2;
  }
  return value;
}

inline EmState em_fit(const std::vector<UnitStats>& stats, int pg, int rh,
                      const Eigen::MatrixXd& g_phi, const Eigen::MatrixXd& g_psi,
                      double lambda_beta, double lambda_b, double sigma2_init,
                      int max_iterations, double tol) {
  const int r = static_cast<int>(g_phi.rows());
  const int s = static_cast<int>(g_psi.rows());
  const int tdim = pg + r;
  const int vdim = rh + s;
  const int n_units = static_cast<int>(stats.size());

  EmState st;
  st.theta = Eigen::VectorXd::Zero(tdim);
  st.vartheta.assign(n_units, Eigen::VectorXd::Zero(vdim));
  st.psi = Eigen::MatrixXd::Identity(rh, rh) * 0.1;
  st.d = Eigen::MatrixXd::Identity(s, s) * 0.1;
  st.sigma2 = std::max(sigma2_init, 1e-10);

  Eigen::MatrixXd p_theta = Eigen::MatrixXd::Zero(tdim, tdim);
  p_theta.bottomRightCorner(r, r) = lambda_beta * g_phi;

  double n_total = 0.0;
  for (const auto& u : stats) n_total += u.n;

  for (int iter = 0; iter < max_iterations; ++iter) {
    st.iterations = iter + 1;
    const double obj_before =
        objective(stats, st, g_phi, g_psi, lambda_beta, lambda_b, pg, rh);

    // M-step: joint generalized ridge for theta and every vartheta_i,
    // solved through the Schur complement on theta.
    const Eigen::MatrixXd psi_inv =
        st.psi.llt().solve(Eigen::MatrixXd::Identity(rh, rh));
    const Eigen::MatrixXd d_inv = st.d.llt().solve(Eigen::MatrixXd::Identity(s, s));
    Eigen::MatrixXd b_prior = Eigen::MatrixXd::Zero(vdim, vdim);
    b_prior.topLeftCorner(rh, rh) = psi_inv / st.sigma2;
    b_prior.bottomRightCorner(s, s) = d_inv / st.sigma2 + lambda_b * g_psi;

    std::vector<Eigen::LLT<Eigen::MatrixXd>> m_chol;
    m_chol.reserve(stats.size());
    Eigen::MatrixXd s_theta = p_theta;
    Eigen::VectorXd r_theta = Eigen::VectorXd::Zero(tdim);
    for (const auto& u : stats) {
      Eigen::MatrixXd m_i = u.hth / st.sigma2 + b_prior;
      Eigen::LLT<Eigen::MatrixXd> llt(m_i);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "fit_flmm_eod: singular penalized system; try larger smoothing parameters");
      const Eigen::MatrixXd gth_s = u.gth / st.sigma2;  // t x v
      s_theta += u.gtg / st.sigma2 - gth_s * llt.solve(gth_s.transpose());
      r_theta += u.gtb / st.sigma2 - gth_s * llt.solve(u.htb / st.sigma2);
      m_chol.push_back(std::move(llt));
    }
    // tiny ridge keeps the solve defined when a flat functional covariate
    // aliases the intercept (the penalty null space contains constants)
    const double ridge = 1e-10 * (s_theta.trace() / tdim + 1.0);
    s_theta += ridge * Eigen::MatrixXd::Identity(tdim, tdim);
    Eigen::LDLT<Eigen::MatrixXd> s_ldlt(s_theta);
    if (s_ldlt.info() != Eigen::Success)
      throw std::runtime_error(
          "fit_flmm_eod: singular penalized system; try larger smoothing parameters");
    const Eigen::VectorXd theta_new = s_ldlt.solve(r_theta);

    std::vector<Eigen::VectorXd> vt_new(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const auto& u = stats[i];
      vt_new[i] = m_chol[i].solve((u.htb - u.gth.transpose() * theta_new) / st.sigma2);
    }

    EmState probe = st;
    probe.theta = theta_new;
    probe.vartheta = vt_new;
    const double obj_after =
        objective(stats, probe, g_phi, g_psi, lambda_beta, lambda_b, pg, rh);
    st.trace.push_back({obj_before, obj_after});

    // E-step: moment updates from residuals and conditional second moments.
    double rss_e = 0.0;
    Eigen::MatrixXd t_w = Eigen::MatrixXd::Zero(rh, rh);
    Eigen::MatrixXd t_q = Eigen::MatrixXd::Zero(s, s);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const auto& u = stats[i];
      const Eigen::VectorXd& vt = vt_new[i];
      const Eigen::MatrixXd c_i =
          m_chol[i].solve(Eigen::MatrixXd::Identity(vdim, vdim));
      const double rss = u.btb - 2.0 * theta_new.dot(u.gtb) - 2.0 * vt.dot(u.htb) +
                         2.0 * theta_new.dot(u.gth * vt) +
                         theta_new.dot(u.gtg * theta_new) + vt.dot(u.hth * vt);
      rss_e += rss + (c_i * u.hth).trace();
      t_w += vt.head(rh) * vt.head(rh).transpose() + c_i.topLeftCorner(rh, rh);
      t_q += vt.tail(s) * vt.tail(s).transpose() + c_i.bottomRightCorner(s, s);
    }
    // REML flavor: account for the scalar fixed effects in the denominator
    const double sigma2_new = std::max(rss_e / std::max(n_total - pg, 1.0), 1e-12);
    Eigen::MatrixXd psi_new = (t_w / n_units) / sigma2_new;
    Eigen::MatrixXd d_new = (t_q / n_units) / sigma2_new;
    psi_new += 1e-10 * Eigen::MatrixXd::Identity(rh, rh);
    d_new += 1e-10 * Eigen::MatrixXd::Identity(s, s);

    // convergence on all parameter blocks
    double delta = (theta_new - st.theta).cwiseAbs().maxCoeff() /
                   (1.0 + theta_new.cwiseAbs().maxCoeff());
    delta = std::max(delta, std::abs(sigma2_new - st.sigma2) / (1.0 + sigma2_new));
    delta = std::max(delta, (psi_new - st.psi).cwiseAbs().maxCoeff() /
                                (1.0 + psi_new.cwiseAbs().maxCoeff()));
    delta = std::max(delta, (d_new - st.d).cwiseAbs().maxCoeff() /
                                (1.0 + d_new.cwiseAbs().maxCoeff()));

    st.theta = theta_new;
    st.vartheta = vt_new;
    st.sigma2 = sigma2_new;
    st.psi = psi_new;
    st.d = d_new;

    if (delta < tol) {
      st.converged = true;
      break;
    }
  }
  return st;
}

inline std::vector<UnitDesign> build_designs(const std::vector<const UnitData*>& units,
                                             const EodFormula& formula,
                                             const BSplineBasis& beta_basis,
                                             const BSplineBasis& unit_basis) {
  if (units.empty()) throw std::invalid_argument("fit_flmm_eod: no units");
  const int grid = units.front()->cycles.front().scaled.grid_size();
  if (grid < 2) throw std::invalid_argument("fit_flmm_eod: records carry no scaled curves");
  const Eigen::VectorXd w = trapezoid_weights(grid);
  const Eigen::MatrixXd phi_mat = beta_basis.evaluate_matrix(unit_grid(grid));
  const Eigen::MatrixXd psi_mat = unit_basis.evaluate_matrix(unit_grid(grid));

  const int pg = formula.n_fixed();
  const int rh = formula.n_random();
  std::vector<UnitDesign> designs;
  designs.reserve(units.size());
  for (const UnitData* uptr : units) {
    const UnitData& unit = *uptr;
    const int n = unit.n_cycles();
    if (n == 0) throw std::invalid_argument("fit_flmm_eod: unit without cycles");
    UnitDesign d;
    d.unit_id = unit.unit_id;
    d.gt.resize(n, pg + beta_basis.size());
    d.ht.resize(n, rh + unit_basis.size());
    d.b.resize(n);
    for (int c = 0; c < n; ++c) {
      const CycleRecord& rec = unit.cycles[c];
      if (rec.scaled.grid_size() != grid)
        throw std::invalid_argument("fit_flmm_eod: curves on different grids");
      const TermContext ctx = context_for(rec);
      const Eigen::VectorXd wx = (w.array() * rec.scaled.values.array()).matrix();
      d.gt.row(c).head(pg) = formula.fixed_row(ctx).transpose();
      d.gt.row(c).tail(beta_basis.size()) = (phi_mat.transpose() * wx).transpose();
      d.ht.row(c).head(rh) = formula.random_row(ctx).transpose();
      d.ht.row(c).tail(unit_basis.size()) = (psi_mat.transpose() * wx).transpose();
      d.b(c) = rec.eod_s;
    }
    designs.push_back(std::move(d));
  }
  std::stable_sort(designs.begin(), designs.end(),
                   [](const UnitDesign& a, const UnitDesign& b) { return a.unit_id < b.unit_id; });
  return designs;
}

inline double initial_sigma2(const std::vector<UnitDesign>& designs) {
  const Eigen::Index t = designs.front().gt.cols();
  Eigen::MatrixXd gtg = Eigen::MatrixXd::Identity(t, t) * 1e-8;
  Eigen::VectorXd gtb = Eigen::VectorXd::Zero(t);
  double btb = 0.0, n = 0.0;
  for (const auto& d : designs) {
    gtg += d.gt.transpose() * d.gt;
    gtb += d.gt.transpose() * d.b;
    btb += d.b.squaredNorm();
    n += static_cast<double>(d.b.size());
  }
  const Eigen::VectorXd theta = gtg.ldlt().solve(gtb);
  return std::max((btb - theta.dot(gtb)) / std::max(n - t, 1.0), 1e-8);
}

// Deterministic fold labels; cycles within each unit are spread uniformly
// over folds (or whole units when by_unit is set).
inline std::vector<std::vector<int>> fold_labels(const std::vector<UnitDesign>& designs,
                                                 int folds, bool by_unit, std::uint64_t seed) {
  std::vector<std::vector<int>> labels(designs.size());
  if (by_unit) {
    std::vector<int> unit_fold(designs.size());
    for (std::size_t i = 0; i < designs.size(); ++i) {
      Rng rng = Rng::stream(seed, {0xabcdULL, i});
      unit_fold[i] = static_cast<int>(rng.next_u64() % folds);
    }
    for (std::size_t i = 0; i < designs.size(); ++i)
      labels[i].assign(designs[i].b.size(), unit_fold[i]);
    return labels;
  }
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const int n = static_cast<int>(designs[i].b.size());
    std::vector<int> l(n);
    for (int c = 0; c < n; ++c) l[c] = c % folds;
    // Fisher-Yates with a per-unit stream
    Rng rng = Rng::stream(seed, {0xf01dULL, i});
    for (int c = n - 1; c > 0; --c) {
      const int j = static_cast<int>(rng.next_u64() % (c + 1));
      std::swap(l[c], l[j]);
    }
    labels[i] = std::move(l);
  }
  return labels;
}

}  // namespace flmm_detail

inline FlmmEodFit fit_flmm_eod(const std::vector<const UnitData*>& units,
                               const EodFormula& formula, const FlmmOptions& options = {}) {
  if (units.size() < 2) throw std::invalid_argument("fit_flmm_eod: need at least 2 units");
  const BSplineBasis beta_basis(options.beta_basis_size, options.basis_degree);
  const BSplineBasis unit_basis(options.unit_basis_size, options.basis_degree);
  const Eigen::MatrixXd g_phi = beta_basis.curvature_penalty();
  const Eigen::MatrixXd g_psi = unit_basis.curvature_penalty();
  const int pg = formula.n_fixed();
  const int rh = formula.n_random();

  auto designs = flmm_detail::build_designs(units, formula, beta_basis, unit_basis);
  std::vector<flmm_detail::UnitStats> stats;
  stats.reserve(designs.size());
  for (const auto& d : designs) stats.push_back(flmm_detail::make_stats(d));
  const double sigma2_init = flmm_detail::initial_sigma2(designs);

  double lambda_beta, lambda_b;
  if (options.lambdas) {
    lambda_beta = options.lambdas->first;
    lambda_b = options.lambdas->second;
    if (lambda_beta < 0.0 || lambda_b < 0.0)
      throw std::invalid_argument("fit_flmm_eod: negative smoothing parameter");
  } else {
    // V-fold CV over a log-spaced product grid, held-out squared EOD error
    const int gpts = options.cv_grid_points;
    Eigen::VectorXd grid(gpts);
    for (int j = 0; j < gpts; ++j)
      grid(j) = std::exp(std::log(options.cv_lambda_min) +
                         (std::log(options.cv_lambda_max) - std::log(options.cv_lambda_min)) *
                             (gpts == 1 ? 0.0 : static_cast<double>(j) / (gpts - 1)));
    const auto labels = flmm_detail::fold_labels(designs, options.cv_folds,
                                                 options.cv_by_unit, options.cv_seed);
    double best = std::numeric_limits<double>::infinity();
    lambda_beta = grid(0);
    lambda_b = grid(0);
    for (int jb = 0; jb < gpts; ++jb)
      for (int ju = 0; ju < gpts; ++ju) {
        double sse = 0.0;
        long held = 0;
        bool failed = false;
        for (int fold = 0; fold < options.cv_folds && !failed; ++fold) {
          std::vector<flmm_detail::UnitStats> train_stats;
          std::vector<std::string> train_ids;
          train_stats.reserve(designs.size());
          for (std::size_t i = 0; i < designs.size(); ++i) {
            flmm_detail::UnitDesign sub;
            sub.unit_id = designs[i].unit_id;
            std::vector<int> keep;
            for (int c = 0; c < static_cast<int>(labels[i].size()); ++c)
              if (labels[i][c] != fold) keep.push_back(c);
            if (keep.empty()) continue;
            sub.gt.resize(keep.size(), designs[i].gt.cols());
            sub.ht.resize(keep.size(), designs[i].ht.cols());
            sub.b.resize(keep.size());
            for (std::size_t r0 = 0; r0 < keep.size(); ++r0) {
              sub.gt.row(r0) = designs[i].gt.row(keep[r0]);
              sub.ht.row(r0) = designs[i].ht.row(keep[r0]);
              sub.b(r0) = designs[i].b(keep[r0]);
            }
            train_stats.push_back(flmm_detail::make_stats(sub));
            train_ids.push_back(designs[i].unit_id);
          }
          if (train_stats.size() < 2) continue;
          flmm_detail::EmState state;
          try {
            state = flmm_detail::em_fit(train_stats, pg, rh, g_phi, g_psi, grid(jb),
                                        grid(ju), sigma2_init, options.max_em_iterations,
                                        options.em_tol);
          } catch (const std::runtime_error&) {
            failed = true;
            break;
          }
          // score held-out cycles; units unseen in this fold fall back to
          // the population prediction (zero random effects)
          for (std::size_t i = 0; i < designs.size(); ++i) {
            Eigen::VectorXd vt = Eigen::VectorXd::Zero(designs[i].ht.cols());
            for (std::size_t u2 = 0; u2 < train_ids.size(); ++u2)
              if (train_ids[u2] == designs[i].unit_id) vt = state.vartheta[u2];
            for (int c = 0; c < static_cast<int>(labels[i].size()); ++c) {
              if (labels[i][c] != fold) continue;
              const double pred =
                  designs[i].gt.row(c).dot(state.theta) + designs[i].ht.row(c).dot(vt);
              const double err = designs[i].b(c) - pred;
              sse += err * err;
              ++held;
            }
          }
        }
        if (failed || held == 0) continue;
        const double mse = sse / static_cast<double>(held);
        if (mse < best - 1e-15) {
          best = mse;
          lambda_beta = grid(jb);
          lambda_b = grid(ju);
        }
      }
  }

  const flmm_detail::EmState state =
      flmm_detail::em_fit(stats, pg, rh, g_phi, g_psi, lambda_beta, lambda_b, sigma2_init,
                          options.max_em_iterations, options.em_tol);

  FlmmEodFit fit;
  fit.formula = formula;
  fit.coef_names = formula.coef_names();
  fit.alpha = state.theta.head(pg);
  fit.p = state.theta.tail(beta_basis.size());
  fit.beta_basis_size = options.beta_basis_size;
  fit.unit_basis_size = options.unit_basis_size;
  fit.basis_degree = options.basis_degree;
  fit.psi = state.psi;
  fit.d = state.d;
  fit.sigma2_eps = state.sigma2;
  fit.lambda_beta = lambda_beta;
  fit.lambda_b = lambda_b;
  fit.g_phi = g_phi;
  fit.g_psi = g_psi;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    fit.unit_ids.push_back(designs[i].unit_id);
    fit.w_blups.push_back(state.vartheta[i].head(rh));
    fit.q_blups.push_back(state.vartheta[i].tail(unit_basis.size()));
  }
  fit.em_trace = state.trace;
  fit.converged = state.converged;
  fit.iterations = state.iterations;
  return fit;
}

// Linear predictor with the functional term; the curve supplies j and k.
inline double flmm_predictor(const FlmmEodFit& fit, const std::string& unit_id,
                             const TermContext& ctx, const ScaledCurve& curve,
                             bool population = false) {
  const BSplineBasis bb = fit.beta_basis();
  const BSplineBasis ub = fit.unit_basis();
  const Eigen::VectorXd j = functional_design_terms(curve, bb);
  double value = fit.formula.fixed_row(ctx).dot(fit.alpha) + j.dot(fit.p);
  if (!population) {
    value += fit.formula.random_row(ctx).dot(fit.w_blup(unit_id));
    value += functional_design_terms(curve, ub).dot(fit.q_blup(unit_id));
  }
  return value;
}

inline std::vector<double> fitted_eod_flmm(const FlmmEodFit& fit, const UnitData& unit,
                                           bool population = false) {
  std::vector<double> out;
  out.reserve(unit.cycles.size());
  for (const auto& rec : unit.cycles)
    out.push_back(flmm_predictor(fit, unit.unit_id, context_for(rec), rec.scaled, population));
  return out;
}

struct FutureCycleCurve {
  int cycle = 0;
  double rest_h = 0.0;
  CovariateVector covariates;
  ScaledCurve curve;  // predicted scaled curve for this cycle
};

// Recursive multi-step prediction; predicted scaled curves must be supplied
// for every horizon cycle.
inline std::vector<double> predict_eod_path_flmm(const FlmmEodFit& fit,
                                                 const std::string& unit_id,
                                                 int last_history_cycle,
                                                 double last_observed_eod,
                                                 const std::vector<FutureCycleCurve>& horizon,
                                                 bool population = false) {
  std::vector<double> out;
  out.reserve(horizon.size());
  double lag = last_observed_eod;
  int expected = last_history_cycle + 1;
  for (const auto& fc : horizon) {
    if (fc.cycle != expected)
      throw std::invalid_argument(
          "predict_eod_path_flmm: horizon must start right after the history and be contiguous");
    if (fc.curve.grid_size() < 2)
      throw std::invalid_argument("predict_eod_path_flmm: missing future curve for cycle " +
                                  std::to_string(fc.cycle));
    TermContext ctx;
    ctx.cycle = static_cast<double>(fc.cycle);
    ctx.rest_h = fc.rest_h;
    ctx.prev_eod = lag;
    ctx.covariates = &fc.covariates;
    const double pred = flmm_predictor(fit, unit_id, ctx, fc.curve, population);
    out.push_back(pred);
    lag = pred;
    ++expected;
  }
  return out;
}

}  // namespace fdm
