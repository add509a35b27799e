#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/curves.hpp"
#include "fdm/eod.hpp"
#include "fdm/flmm.hpp"
#include "fdm/fpca.hpp"
#include "fdm/mlmm.hpp"
#include "fdm/types.hpp"

namespace fdm {

enum class PathSource { Observed, Fitted, Predicted };

inline const char* to_string(PathSource s) {
  switch (s) {
    case PathSource::Observed: return "observed";
    case PathSource::Fitted: return "fitted";
    case PathSource::Predicted: return "predicted";
  }
  return "?";
}

struct PathEntry {
  int cycle = 0;
  double d = 0.0;
  PathSource source = PathSource::Observed;
  std::optional<double> lower;
  std::optional<double> upper;
  double eod = std::numeric_limits<double>::quiet_NaN();
  bool exceeds_threshold = false;
};

struct DegradationPath {
  std::string unit_id;
  std::vector<PathEntry> entries;
  std::optional<double> threshold;

  void apply_threshold() {
    if (!threshold) return;
    for (auto& e : entries) e.exceeds_threshold = e.d > *threshold;
  }
};

// Train/test boundary: test cycles are split_cycle..n_i with
// split_cycle = floor(n_i * tr%) + 1.
inline int split_cycle(int n_i, double train_percent) {
  return static_cast<int>(std::floor(n_i * train_percent / 100.0)) + 1;
}

enum class EodModelKind { Lme, Flmm };

inline const char* to_string(EodModelKind k) {
  return k == EodModelKind::Lme ? "lme" : "flmm";
}

struct PipelineConfig {
  FpcaSelection selection = FpcaSelection::fixed(3);
  std::vector<std::string> mlmm_covariates;
  EodModelKind eod_model = EodModelKind::Lme;
  EodFormula eod_formula;
  double train_percent = 80.0;
  double p_norm = 1.0;
  std::optional<double> failure_threshold;
  MlmmConfig mlmm;  // covariates field is overridden by mlmm_covariates
  lme::LmeOptions lme;
  FlmmOptions flmm;
};

struct UnitPipelineOutput {
  std::string unit_id;
  int split = 0;  // first test cycle
  std::vector<double> eod_hat;         // cycles 1..n_i
  std::vector<ScaledCurve> curve_hat;  // fitted / predicted scaled curves
  std::vector<double> upsilon_hat;
  DegradationPath model_path;
  DegradationPath observed_path;
};

struct PipelineResult {
  FpcaModel fpca;
  MlmmFit mlmm;
  std::optional<LmeEodFit> lme_fit;
  std::optional<FlmmEodFit> flmm_fit;
  std::vector<UnitPipelineOutput> units;
};

namespace pipeline_detail {

inline UnitData train_slice(const UnitData& unit, int split) {
  UnitData t;
  t.unit_id = unit.unit_id;
  for (const auto& rec : unit.cycles)
    if (rec.cycle < split) t.cycles.push_back(rec);
  return t;
}

}  // namespace pipeline_detail

// Algorithm: rescale (already done at ingest), FPCA + score model on the
// training cycles, EOD model on the training cycles, then per cycle
// reconstruct (x_hat, b_hat) -> y_hat -> norm -> degradation, tagging
// training cycles as fitted and the rest as predicted.
inline PipelineResult run_fdm_pipeline(const Dataset& dataset, const PipelineConfig& config,
                                       const Eigen::VectorXd& unit_weights,
                                       const FpcaModel* reuse_fpca = nullptr) {
  if (!(config.train_percent > 0.0 && config.train_percent < 100.0))
    throw std::invalid_argument("run_fdm_pipeline: train_percent must be in (0, 100)");
  if (dataset.n_units() < 2)
    throw std::invalid_argument("run_fdm_pipeline: need at least 2 units");
  if (unit_weights.size() != dataset.n_units())
    throw std::invalid_argument("run_fdm_pipeline: weight length mismatch");

  std::vector<UnitData> train_units;
  std::vector<int> splits;
  for (const auto& unit : dataset.units) {
    const int split = split_cycle(unit.n_cycles(), config.train_percent);
    if (split < 3)
      throw std::invalid_argument("run_fdm_pipeline: unit '" + unit.unit_id +
                                  "' has too few training cycles");
    if (split > unit.n_cycles())
      throw std::invalid_argument("run_fdm_pipeline: unit '" + unit.unit_id +
                                  "' has an empty test range");
    splits.push_back(split);
    train_units.push_back(pipeline_detail::train_slice(unit, split));
  }

  PipelineResult result;

  // Stage 1: FPCA on all training curves.
  try {
    if (reuse_fpca) {
      result.fpca = *reuse_fpca;
    } else {
      std::vector<ScaledCurve> curves;
      for (const auto& t : train_units)
        for (const auto& rec : t.cycles) curves.push_back(rec.scaled);
      result.fpca = fit_fpca(curves, {config.selection, nullptr});
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline stage fpca: ") + e.what());
  }

  // Stage 2: score model on the training cycles.
  try {
    std::vector<std::vector<ScoreVector>> scores;
    std::vector<const UnitData*> ptrs;
    for (const auto& t : train_units) {
      std::vector<ScoreVector> s;
      for (const auto& rec : t.cycles) s.push_back(project_scores(result.fpca, rec.scaled));
      scores.push_back(std::move(s));
      ptrs.push_back(&t);
    }
    MlmmConfig mc = config.mlmm;
    mc.covariates = config.mlmm_covariates;
    result.mlmm = fit_mlmm(scores, ptrs, mc, unit_weights);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline stage mlmm: ") + e.what());
  }

  // Stage 3: EOD model on the training cycles.
  try {
    std::vector<const UnitData*> ptrs;
    for (const auto& t : train_units) ptrs.push_back(&t);
    if (config.eod_model == EodModelKind::Lme) {
      result.lme_fit = fit_lme_eod(ptrs, config.eod_formula, unit_weights, config.lme);
    } else {
      result.flmm_fit = fit_flmm_eod(ptrs, config.eod_formula, config.flmm);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline stage eod: ") + e.what());
  }

  // Stage 4: per-unit reconstruction and degradation paths.
  try {
    for (int i = 0; i < dataset.n_units(); ++i) {
      const UnitData& unit = dataset.units[i];
      const int split = splits[i];
      UnitPipelineOutput out;
      out.unit_id = unit.unit_id;
      out.split = split;

      // scaled-curve estimates for every cycle from the score model
      for (const auto& rec : unit.cycles) {
        const Eigen::VectorXd gamma =
            predict_scores(result.mlmm, unit.unit_id, rec.cycle, rec.covariates);
        ScoreVector sv;
        sv.unit_id = unit.unit_id;
        sv.cycle = rec.cycle;
        sv.scores = gamma;
        out.curve_hat.push_back(reconstruct_curve(result.fpca, sv));
      }

      // EOD estimates: fitted with observed lags on train, recursive after
      out.eod_hat.assign(unit.cycles.size(), 0.0);
      const UnitData& train = train_units[i];
      if (config.eod_model == EodModelKind::Lme) {
        const auto fitted = fitted_eod(*result.lme_fit, train);
        for (int c = 0; c < split - 1; ++c) out.eod_hat[c] = fitted[c];
        std::vector<FutureCycle> horizon;
        for (int c = split; c <= unit.n_cycles(); ++c) {
          const CycleRecord& rec = unit.cycles[c - 1];
          FutureCycle fc;
          fc.cycle = rec.cycle;
          fc.rest_h = rec.rest_h;
          fc.covariates = rec.covariates;
          horizon.push_back(std::move(fc));
        }
        const auto preds = predict_eod_path(*result.lme_fit, unit.unit_id, split - 1,
                                            train.cycles.back().eod_s, horizon);
        for (std::size_t s = 0; s < preds.size(); ++s) out.eod_hat[split - 1 + s] = preds[s];
      } else {
        const auto fitted = fitted_eod_flmm(*result.flmm_fit, train);
        for (int c = 0; c < split - 1; ++c) out.eod_hat[c] = fitted[c];
        std::vector<FutureCycleCurve> horizon;
        for (int c = split; c <= unit.n_cycles(); ++c) {
          const CycleRecord& rec = unit.cycles[c - 1];
          FutureCycleCurve fc;
          fc.cycle = rec.cycle;
          fc.rest_h = rec.rest_h;
          fc.covariates = rec.covariates;
          fc.curve = out.curve_hat[c - 1];
          horizon.push_back(std::move(fc));
        }
        const auto preds = predict_eod_path_flmm(*result.flmm_fit, unit.unit_id, split - 1,
                                                 train.cycles.back().eod_s, horizon);
        for (std::size_t s = 0; s < preds.size(); ++s) out.eod_hat[split - 1 + s] = preds[s];
      }

      // norms and degradation; the reference norm is the observed first cycle
      const double first_norm =
          lp_norm_scaled(unit.cycles.front().scaled, unit.cycles.front().eod_s, config.p_norm);
      out.model_path.unit_id = unit.unit_id;
      out.model_path.threshold = config.failure_threshold;
      out.observed_path.unit_id = unit.unit_id;
      out.observed_path.threshold = config.failure_threshold;
      for (int c = 0; c < unit.n_cycles(); ++c) {
        const CycleRecord& rec = unit.cycles[c];
        const double b_hat = out.eod_hat[c];
        // a non-positive predicted EOD means the curve has no domain left;
        // its norm is zero (full degradation)
        const double upsilon =
            b_hat > 0.0 ? lp_norm_scaled(out.curve_hat[c], b_hat, config.p_norm) : 0.0;
        out.upsilon_hat.push_back(upsilon);
        PathEntry model_entry;
        model_entry.cycle = rec.cycle;
        model_entry.d = degradation_amount(first_norm, upsilon);
        model_entry.source = rec.cycle < split ? PathSource::Fitted : PathSource::Predicted;
        model_entry.eod = b_hat;
        out.model_path.entries.push_back(model_entry);

        PathEntry obs_entry;
        obs_entry.cycle = rec.cycle;
        obs_entry.d = degradation_amount(first_norm,
                                         lp_norm_scaled(rec.scaled, rec.eod_s, config.p_norm));
        obs_entry.source = PathSource::Observed;
        obs_entry.eod = rec.eod_s;
        out.observed_path.entries.push_back(obs_entry);
      }
      out.model_path.apply_threshold();
      out.observed_path.apply_threshold();
      result.units.push_back(std::move(out));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pipeline stage paths: ") + e.what());
  }
  return result;
}

inline PipelineResult run_fdm_pipeline(const Dataset& dataset, const PipelineConfig& config) {
  return run_fdm_pipeline(dataset, config, Eigen::VectorXd::Ones(dataset.n_units()));
}

// ---------------------------------------------------------------------------
// Evaluation metrics: pooled over units with denominators sum(n_i - split + 1)
// for prediction and sum(split - 1) for the training fit.
// ---------------------------------------------------------------------------

struct Metrics {
  double rmse = 0.0;
  double rmspe = 0.0;
};

inline Metrics evaluate_scalar_series(const std::vector<std::vector<double>>& truth,
                                      const std::vector<std::vector<double>>& estimate,
                                      const std::vector<int>& splits) {
  if (truth.size() != estimate.size() || truth.size() != splits.size())
    throw std::invalid_argument("evaluate_scalar_series: misaligned inputs");
  double train_sum = 0.0, test_sum = 0.0;
  long train_n = 0, test_n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != estimate[i].size())
      throw std::invalid_argument("evaluate_scalar_series: misaligned series");
    const int split = splits[i];
    for (std::size_t c = 0; c < truth[i].size(); ++c) {
      const double err = estimate[i][c] - truth[i][c];
      if (static_cast<int>(c) + 1 < split) {
        train_sum += err * err;
        ++train_n;
      } else {
        test_sum += err * err;
        ++test_n;
      }
    }
  }
  if (test_n == 0) throw std::invalid_argument("evaluate_scalar_series: empty test set");
  Metrics m;
  m.rmse = train_n > 0 ? std::sqrt(train_sum / train_n) : 0.0;
  m.rmspe = std::sqrt(test_sum / test_n);
  return m;
}

inline Metrics evaluate_curves(const std::vector<std::vector<ScaledCurve>>& truth,
                               const std::vector<std::vector<ScaledCurve>>& estimate,
                               const std::vector<int>& splits) {
  if (truth.size() != estimate.size() || truth.size() != splits.size())
    throw std::invalid_argument("evaluate_curves: misaligned inputs");
  double train_sum = 0.0, test_sum = 0.0;
  long train_n = 0, test_n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != estimate[i].size())
      throw std::invalid_argument("evaluate_curves: misaligned series");
    for (std::size_t c = 0; c < truth[i].size(); ++c) {
      const double ise = trapezoid_unit(
          (estimate[i][c].values - truth[i][c].values).array().square().matrix());
      if (static_cast<int>(c) + 1 < splits[i]) {
        train_sum += ise;
        ++train_n;
      } else {
        test_sum += ise;
        ++test_n;
      }
    }
  }
  if (test_n == 0) throw std::invalid_argument("evaluate_curves: empty test set");
  Metrics m;
  m.rmse = train_n > 0 ? std::sqrt(train_sum / train_n) : 0.0;
  m.rmspe = std::sqrt(test_sum / test_n);
  return m;
}

}  // namespace fdm
