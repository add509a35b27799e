#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/parallel.hpp"
#include "fdm/pipeline.hpp"
#include "fdm/rng.hpp"

namespace fdm {

// Fractional random weight bootstrap: units are reweighted with scaled
// Dirichlet draws instead of resampled, the two mixed models are refit with
// those weights, and one training residual per replicate widens the test
// predictions. Intervals are empirical quantiles across replicates.

struct BootstrapConfig {
  int replicates = 5000;
  double level = 0.95;
  std::uint64_t seed = 0;
  Eigen::VectorXd dirichlet_params;  // empty = all ones
  bool per_prediction_residuals = false;
  int threads = 1;
  double max_drop_fraction = 0.05;

  void validate() const {
    if (replicates < 2) throw std::invalid_argument("bootstrap: need at least 2 replicates");
    if (!(level > 0.0 && level < 1.0))
      throw std::invalid_argument("bootstrap: level must be in (0, 1)");
    if (dirichlet_params.size() > 0 && dirichlet_params.minCoeff() <= 0.0)
      throw std::invalid_argument("bootstrap: Dirichlet parameters must be positive");
  }
};

// Dirichlet(lambda) draw scaled by n so the weights sum to n. With unit
// parameters this reduces to normalized unit-rate exponentials.
inline Eigen::VectorXd draw_unit_weights(int n, const BootstrapConfig& config, Rng& rng) {
  if (n < 1) throw std::invalid_argument("draw_unit_weights: n must be >= 1");
  Eigen::VectorXd g(n);
  const bool unit_params = config.dirichlet_params.size() == 0;
  for (int i = 0; i < n; ++i) {
    if (unit_params) {
      g(i) = rng.exponential();
    } else {
      if (config.dirichlet_params.size() != n)
        throw std::invalid_argument("draw_unit_weights: Dirichlet parameter length mismatch");
      g(i) = rng.gamma(config.dirichlet_params(i));
    }
  }
  return g * (static_cast<double>(n) / g.sum());
}

// Type-7 quantile (linear interpolation between order statistics) on a
// sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty sample");
  if (prob <= 0.0) return sorted.front();
  if (prob >= 1.0) return sorted.back();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct IntervalEntry {
  std::string unit_id;
  int cycle = 0;
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapResult {
  std::vector<IntervalEntry> intervals;
  double level = 0.95;
  int replicates = 0;
  int dropped_replicates = 0;
  bool reliable = true;
};

inline BootstrapResult bootstrap_prediction_intervals(const Dataset& dataset,
                                                      const PipelineConfig& pipeline_config,
                                                      const BootstrapConfig& config) {
  config.validate();
  if (pipeline_config.eod_model != EodModelKind::Lme)
    throw std::invalid_argument(
        "bootstrap_prediction_intervals: defined for the LME EOD model");

  const int n = dataset.n_units();
  const PipelineResult base = run_fdm_pipeline(dataset, pipeline_config);

  // test-cycle layout: one slot per (unit, test cycle)
  struct Slot {
    int unit = 0;
    int cycle = 0;
  };
  std::vector<Slot> slots;
  for (int i = 0; i < n; ++i) {
    const auto& u = base.units[i];
    for (const auto& e : u.model_path.entries)
      if (e.source == PathSource::Predicted) slots.push_back({i, e.cycle});
  }
  if (slots.empty())
    throw std::invalid_argument("bootstrap_prediction_intervals: no test cycles to cover");

  const int b_total = config.replicates;
  std::vector<std::vector<double>> draws(slots.size());
  for (auto& d : draws) d.assign(b_total, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> failed(b_total, 0);

  parallel_for(b_total, std::max(config.threads, 1), [&](int b) {
    Rng rng = Rng::stream(config.seed, {0xb007ULL, static_cast<std::uint64_t>(b)});
    try {
      const Eigen::VectorXd weights = draw_unit_weights(n, config, rng);
      const PipelineResult rep =
          run_fdm_pipeline(dataset, pipeline_config, weights, &base.fpca);

      // pooled training residuals of the degradation amounts
      std::vector<double> residuals;
      for (int i = 0; i < n; ++i) {
        const auto& model = rep.units[i].model_path.entries;
        const auto& obs = rep.units[i].observed_path.entries;
        for (std::size_t c = 0; c < model.size(); ++c)
          if (model[c].source == PathSource::Fitted)
            residuals.push_back(obs[c].d - model[c].d);
      }
      if (residuals.empty()) throw std::runtime_error("no training residuals");

      const double shared =
          residuals[static_cast<std::size_t>(rng.next_u64() % residuals.size())];
      std::size_t slot_idx = 0;
      for (int i = 0; i < n; ++i) {
        const auto& model = rep.units[i].model_path.entries;
        for (const auto& e : model) {
          if (e.source != PathSource::Predicted) continue;
          const double eps =
              config.per_prediction_residuals
                  ? residuals[static_cast<std::size_t>(rng.next_u64() % residuals.size())]
                  : shared;
          draws[slot_idx++][b] = e.d + eps;
        }
      }
    } catch (const std::exception&) {
      failed[b] = 1;
    }
  });

  BootstrapResult out;
  out.level = config.level;
  out.replicates = b_total;
  for (char f : failed) out.dropped_replicates += f;
  out.reliable = out.dropped_replicates <=
                 static_cast<int>(config.max_drop_fraction * b_total);
  if (b_total - out.dropped_replicates < 2)
    throw std::runtime_error("bootstrap_prediction_intervals: all replicates failed");

  const double alpha = 1.0 - config.level;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    std::vector<double> values;
    values.reserve(b_total);
    for (int b = 0; b < b_total; ++b)
      if (!failed[b]) values.push_back(draws[s][b]);
    std::sort(values.begin(), values.end());
    IntervalEntry e;
    const auto& u = base.units[slots[s].unit];
    e.unit_id = u.unit_id;
    e.cycle = slots[s].cycle;
    for (const auto& me : u.model_path.entries)
      if (me.cycle == slots[s].cycle) e.point = me.d;
    e.lower = quantile_sorted(values, alpha / 2.0);
    e.upper = quantile_sorted(values, 1.0 - alpha / 2.0);
    out.intervals.push_back(std::move(e));
  }
  return out;
}

}  // namespace fdm
