#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/covariates.hpp"
#include "fdm/curves.hpp"
#include "fdm/grid.hpp"
#include "fdm/rng.hpp"
#include "fdm/types.hpp"

namespace fdm {

enum class SimEodModel { Lme, Flmm };

inline const char* to_string(SimEodModel m) {
  return m == SimEodModel::Lme ? "lme" : "flmm";
}

// Synthetic-study configuration. Defaults reproduce the reference study:
// units with per-cycle curves built from a three-component basis around
// mu(t) = 0.75 log(60 - 59.5 t), EODs from an autoregressive mixed model
// with rest effects, and a long break every 10 cycles.
struct SimulationConfig {
  int n = 20;
  int n_i = 50;
  double train_percent = 80.0;
  SimEodModel eod_model = SimEodModel::Lme;
  std::uint64_t seed = 1;
  int grid_size = kDefaultGridSize;

  // EOD model coefficients
  double alpha0_lme = 9.0;
  double alpha0_flmm = 3.0;
  double alpha1 = -0.06;  // cycle (lme only)
  double alpha2 = 0.05;   // previous EOD
  double alpha3 = 1.0;    // rest covariate
  double alpha4 = 1.0;    // unit condition z (lme only)
  double sigma0_lme = 0.9;
  double sigma0_flmm = 0.3;
  double sigma1 = 0.006;  // random cycle slope (lme)
  double sigma2 = 0.005;  // random lag slope (flmm)
  double sigma_eps = 0.1;

  // score model coefficients
  Eigen::Vector3d v0{1.0, 0.1, -0.1};
  Eigen::Vector3d v1{-0.02, 0.0, 0.0};
  Eigen::Vector3d v2{0.025, 0.02, 0.015};
  double sigma_u = 0.001;
  double sigma_delta = 0.05;

  // functional slope coefficient scale for b_i(t)
  double sigma_r = 0.05;
};

inline double sim_mean_curve(double t) { return 0.75 * std::log(60.0 - 59.5 * t); }

inline Eigen::VectorXd sim_mean_on_grid(int g) {
  Eigen::VectorXd mu(g);
  for (int i = 0; i < g; ++i) mu(i) = sim_mean_curve(static_cast<double>(i) / (g - 1));
  return mu;
}

inline Eigen::MatrixXd sim_basis_on_grid(int g) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  Eigen::MatrixXd phi(g, 3);
  for (int i = 0; i < g; ++i) {
    const double t = static_cast<double>(i) / (g - 1);
    phi(i, 0) = 1.0;
    phi(i, 1) = std::sqrt(2.0) * std::sin(two_pi * t);
    phi(i, 2) = std::sqrt(2.0) * std::cos(two_pi * t);
  }
  return phi;
}

inline double sim_beta_true(double t) {
  constexpr double pi = 3.14159265358979323846264338328;
  return 3.0 - 4.0 * t + std::sin(pi * t);
}

inline Eigen::VectorXd sim_beta_true_on_grid(int g) {
  Eigen::VectorXd beta(g);
  for (int i = 0; i < g; ++i) beta(i) = sim_beta_true(static_cast<double>(i) / (g - 1));
  return beta;
}

// Everything the generator knew; kept for evaluation against fits.
struct GroundTruth {
  std::vector<std::vector<double>> eod;            // b_ic
  std::vector<std::vector<Eigen::Vector3d>> scores;
  std::vector<std::vector<double>> degradation;    // from the noiseless curves
  std::vector<double> z;                           // unit conditions
  Eigen::VectorXd beta_on_grid;                    // flmm model only (empty otherwise)
};

struct SimulatedData {
  Dataset dataset;
  GroundTruth truth;
  SimulationConfig config;
  int resampled_cycles = 0;  // draws rejected for non-positive EOD
};

// The rest-period schedule: zero before the first cycle, a long break every
// 10 cycles, a short one otherwise; negative draws truncate at zero.
inline double sim_rest_hours(int cycle, Rng& rng) {
  if (cycle == 1) return 0.0;
  const double delta = (cycle % 10 == 0) ? 10.0 + rng.normal() * 2.0 : 1.0 + rng.normal() * 0.1;
  return std::max(delta, 0.0);
}

inline SimulatedData generate_dataset(const SimulationConfig& config) {
  if (config.n < 2 || config.n_i < 2)
    throw std::invalid_argument("generate_dataset: need n >= 2 and n_i >= 2");
  if (!(config.train_percent > 0.0 && config.train_percent < 100.0))
    throw std::invalid_argument("generate_dataset: train_percent must be in (0, 100)");

  const int g = config.grid_size;
  const Eigen::VectorXd mu = sim_mean_on_grid(g);
  const Eigen::MatrixXd phi = sim_basis_on_grid(g);
  const Eigen::VectorXd w = trapezoid_weights(g);
  const Eigen::VectorXd beta =
      config.eod_model == SimEodModel::Flmm ? sim_beta_true_on_grid(g) : Eigen::VectorXd();
  constexpr double two_pi = 6.283185307179586476925286766559;

  SimulatedData out;
  out.config = config;
  out.dataset.grid_size = g;
  if (config.eod_model == SimEodModel::Flmm) out.truth.beta_on_grid = beta;

  for (int i = 0; i < config.n; ++i) {
    Rng rng = Rng::stream(config.seed, {0x51caULL, static_cast<std::uint64_t>(i)});
    UnitData unit;
    unit.unit_id = "u" + std::to_string(1000 + i);

    const double z = rng.uniform();
    const double w0 = rng.normal() * (config.eod_model == SimEodModel::Lme
                                          ? config.sigma0_lme
                                          : config.sigma0_flmm);
    const double w1 = rng.normal() * config.sigma1;  // cycle slope (lme)
    const double w2 = rng.normal() * config.sigma2;  // lag slope (flmm)
    Eigen::Vector3d u0, u1, r_coef;
    for (int j = 0; j < 3; ++j) {
      u0(j) = rng.normal() * config.sigma_u;
      u1(j) = rng.normal() * config.sigma_u;
      r_coef(j) = rng.normal() * config.sigma_r;
    }
    // per-unit functional random slope b_i(t) on the grid
    Eigen::VectorXd bi = Eigen::VectorXd::Zero(g);
    if (config.eod_model == SimEodModel::Flmm) {
      for (int gg = 0; gg < g; ++gg) {
        const double t = static_cast<double>(gg) / (g - 1);
        bi(gg) = r_coef(0) + r_coef(1) * std::sin(two_pi * t) + r_coef(2) * std::cos(two_pi * t);
      }
    }

    std::vector<double> eods, degr;
    std::vector<Eigen::Vector3d> score_list;
    double prev_eod = 0.0;
    double first_norm = 0.0;

    for (int c = 1; c <= config.n_i; ++c) {
      const double rest = sim_rest_hours(c, rng);

      Eigen::Vector3d gamma;
      for (int j = 0; j < 3; ++j)
        gamma(j) = (config.v0(j) + u0(j)) + (config.v1(j) + u1(j)) * c + config.v2(j) * z +
                   rng.normal() * config.sigma_delta;
      const Eigen::VectorXd x = mu + phi * gamma;

      double b = 0.0;
      bool ok = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double eps = rng.normal() * config.sigma_eps;
        if (config.eod_model == SimEodModel::Lme) {
          b = config.alpha0_lme + w0 + (config.alpha1 + w1) * c + config.alpha2 * prev_eod +
              config.alpha3 * rest_covariate(rest) + config.alpha4 * z + eps;
        } else {
          const double functional = w.dot(((beta + bi).array() * x.array()).matrix());
          b = config.alpha0_flmm + w0 + (config.alpha2 + w2) * prev_eod +
              config.alpha3 * rest_covariate(rest) + functional + eps;
        }
        if (b > 0.0) {
          ok = true;
          break;
        }
        ++out.resampled_cycles;
      }
      if (!ok) throw std::runtime_error("generate_dataset: could not draw a positive EOD");

      CycleRecord rec;
      rec.unit_id = unit.unit_id;
      rec.cycle = c;
      rec.eod_s = b;
      rec.rest_h = rest;
      rec.prev_eod_s = prev_eod;
      rec.covariates.set_extra("z", z);
      rec.scaled.unit_id = unit.unit_id;
      rec.scaled.cycle = c;
      rec.scaled.values = x;

      const double norm = lp_norm_scaled(rec.scaled, b, 1.0);
      if (c == 1) first_norm = norm;
      degr.push_back(degradation_amount(first_norm, norm));
      eods.push_back(b);
      score_list.push_back(gamma);
      unit.cycles.push_back(std::move(rec));
      prev_eod = b;
    }

    out.truth.eod.push_back(std::move(eods));
    out.truth.scores.push_back(std::move(score_list));
    out.truth.degradation.push_back(std::move(degr));
    out.truth.z.push_back(z);
    out.dataset.units.push_back(std::move(unit));
  }
  return out;
}

}  // namespace fdm
