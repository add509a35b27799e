#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/gpm.hpp"
#include "fdm/parallel.hpp"
#include "fdm/pipeline.hpp"
#include "fdm/simulate.hpp"

namespace fdm {

enum class Method { Gpm, FdmLme, FdmFlmm };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Gpm: return "gpm";
    case Method::FdmLme: return "fdm-lme";
    case Method::FdmFlmm: return "fdm-flmm";
  }
  return "?";
}

struct ExperimentConfig {
  std::vector<int> n_list{20};
  std::vector<int> ni_list{50};
  std::vector<double> tr_list{80.0};
  std::vector<SimEodModel> model_list{SimEodModel::Lme};
  std::vector<Method> methods{Method::Gpm, Method::FdmLme, Method::FdmFlmm};
  int replications = 20;
  std::uint64_t seed = 1;
  int grid_size = kDefaultGridSize;
  FlmmOptions flmm;
  int threads = 1;
  bool record_beta = false;
  int beta_grid = 101;
  double failure_cell_fraction = 0.05;
};

struct ResultRow {
  int n = 0;
  int n_i = 0;
  double tr = 0.0;
  SimEodModel data_model = SimEodModel::Lme;
  int replicate = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct BetaSample {
  int n = 0, n_i = 0;
  double tr = 0.0;
  SimEodModel data_model = SimEodModel::Lme;
  int replicate = 0;
  Eigen::VectorXd beta;  // beta_hat on the recording grid
};

struct FailureRecord {
  int n = 0, n_i = 0;
  double tr = 0.0;
  SimEodModel data_model = SimEodModel::Lme;
  int replicate = 0;
  std::string method;
  std::string reason;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<BetaSample> betas;
  std::vector<FailureRecord> failures;
  std::vector<std::string> flagged_cells;  // > 5% replicate failures
};

// Model configurations used throughout the study.
inline PipelineConfig experiment_pipeline_config(Method method, double tr) {
  PipelineConfig cfg;
  cfg.train_percent = tr;
  cfg.mlmm_covariates = {"z"};
  if (method == Method::FdmLme) {
    cfg.eod_model = EodModelKind::Lme;
    cfg.eod_formula = EodFormula::standard({"z"});
  } else {
    cfg.eod_model = EodModelKind::Flmm;
    cfg.eod_formula.random_slopes = {Term::prev_eod()};
    cfg.eod_formula.fixed_only = {Term::rest()};
  }
  return cfg;
}

inline GpmConfig experiment_gpm_config() {
  GpmConfig cfg;
  cfg.covariates = {Term::prev_degradation(), Term::rest(), Term::covariate("z")};
  return cfg;
}

namespace experiment_detail {

inline GpmUnit gpm_unit_from(const UnitData& unit, const std::vector<double>& degradation,
                             int count) {
  GpmUnit g;
  g.unit_id = unit.unit_id;
  for (int c = 0; c < count; ++c) {
    g.cycles.push_back(unit.cycles[c].cycle);
    g.d.push_back(degradation[c]);
    g.rest_h.push_back(unit.cycles[c].rest_h);
    g.covariates.push_back(unit.cycles[c].covariates);
  }
  return g;
}

}  // namespace experiment_detail

// One replicate of one cell for one method: fit, predict, pool metrics.
inline std::vector<std::pair<std::string, double>> run_replicate_method(
    const SimulatedData& sim, Method method, double tr, const FlmmOptions& flmm_options,
    Eigen::VectorXd* beta_out = nullptr, int beta_grid = 101) {
  const Dataset& ds = sim.dataset;
  std::vector<int> splits;
  for (const auto& u : ds.units) splits.push_back(split_cycle(u.n_cycles(), tr));

  std::vector<std::pair<std::string, double>> metrics;
  if (method == Method::Gpm) {
    // observed degradation series on train, recursive prediction after
    std::vector<GpmUnit> train_units;
    for (int i = 0; i < ds.n_units(); ++i)
      train_units.push_back(experiment_detail::gpm_unit_from(
          ds.units[i], sim.truth.degradation[i], splits[i] - 1));
    const GpmFit fit = fit_gpm(train_units, experiment_gpm_config());

    std::vector<std::vector<double>> estimate(ds.n_units());
    for (int i = 0; i < ds.n_units(); ++i) {
      const auto fitted = fitted_gpm(fit, train_units[i]);
      estimate[i] = fitted;
      std::vector<FutureCycle> horizon;
      for (int c = splits[i]; c <= ds.units[i].n_cycles(); ++c) {
        FutureCycle fc;
        fc.cycle = c;
        fc.rest_h = ds.units[i].cycles[c - 1].rest_h;
        fc.covariates = ds.units[i].cycles[c - 1].covariates;
        horizon.push_back(std::move(fc));
      }
      const auto preds = predict_gpm(fit, ds.units[i].unit_id, splits[i] - 1,
                                     sim.truth.degradation[i][splits[i] - 2], horizon);
      for (double p : preds) estimate[i].push_back(p);
    }
    const Metrics m = evaluate_scalar_series(sim.truth.degradation, estimate, splits);
    metrics.emplace_back("deg_rmse", m.rmse);
    metrics.emplace_back("deg_rmspe", m.rmspe);
    return metrics;
  }

  PipelineConfig cfg = experiment_pipeline_config(method, tr);
  cfg.flmm = flmm_options;
  const PipelineResult res = run_fdm_pipeline(ds, cfg);

  std::vector<std::vector<double>> deg_hat(ds.n_units()), eod_hat(ds.n_units());
  std::vector<std::vector<ScaledCurve>> curves_true(ds.n_units()), curves_hat(ds.n_units());
  for (int i = 0; i < ds.n_units(); ++i) {
    for (const auto& e : res.units[i].model_path.entries) deg_hat[i].push_back(e.d);
    eod_hat[i] = res.units[i].eod_hat;
    curves_hat[i] = res.units[i].curve_hat;
    for (const auto& rec : ds.units[i].cycles) curves_true[i].push_back(rec.scaled);
  }
  const Metrics deg = evaluate_scalar_series(sim.truth.degradation, deg_hat, splits);
  const Metrics eod = evaluate_scalar_series(sim.truth.eod, eod_hat, splits);
  const Metrics curve = evaluate_curves(curves_true, curves_hat, splits);
  metrics.emplace_back("deg_rmse", deg.rmse);
  metrics.emplace_back("deg_rmspe", deg.rmspe);
  metrics.emplace_back("eod_rmse", eod.rmse);
  metrics.emplace_back("eod_rmspe", eod.rmspe);
  metrics.emplace_back("curve_rmse", curve.rmse);
  metrics.emplace_back("curve_rmspe", curve.rmspe);
  if (method == Method::FdmFlmm && beta_out)
    *beta_out = res.flmm_fit->beta_on_grid(beta_grid);
  return metrics;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  struct Cell {
    int n, n_i;
    double tr;
    SimEodModel model;
    std::uint64_t index;
  };
  std::vector<Cell> cells;
  std::uint64_t cell_index = 0;
  for (int n : config.n_list)
    for (int n_i : config.ni_list)
      for (double tr : config.tr_list)
        for (SimEodModel m : config.model_list) cells.push_back({n, n_i, tr, m, cell_index++});

  struct Task {
    Cell cell;
    int replicate;
  };
  std::vector<Task> tasks;
  for (const auto& c : cells)
    for (int r = 0; r < config.replications; ++r) tasks.push_back({c, r});

  struct TaskOutput {
    std::vector<ResultRow> rows;
    std::vector<BetaSample> betas;
    std::vector<FailureRecord> failures;
  };
  std::vector<TaskOutput> outputs(tasks.size());

  parallel_for(static_cast<int>(tasks.size()), std::max(config.threads, 1), [&](int t) {
    const Task& task = tasks[t];
    SimulationConfig sim_cfg;
    sim_cfg.n = task.cell.n;
    sim_cfg.n_i = task.cell.n_i;
    sim_cfg.train_percent = task.cell.tr;
    sim_cfg.eod_model = task.cell.model;
    sim_cfg.grid_size = config.grid_size;
    sim_cfg.seed = Rng::mix(config.seed ^ Rng::mix(task.cell.index * 1000003ULL +
                                                   static_cast<std::uint64_t>(task.replicate)));
    const SimulatedData sim = generate_dataset(sim_cfg);

    for (Method method : config.methods) {
      try {
        Eigen::VectorXd beta;
        const auto metrics = run_replicate_method(
            sim, method, task.cell.tr, config.flmm,
            config.record_beta ? &beta : nullptr, config.beta_grid);
        for (const auto& [name, value] : metrics) {
          ResultRow row;
          row.n = task.cell.n;
          row.n_i = task.cell.n_i;
          row.tr = task.cell.tr;
          row.data_model = task.cell.model;
          row.replicate = task.replicate;
          row.method = to_string(method);
          row.metric = name;
          row.value = value;
          outputs[t].rows.push_back(std::move(row));
        }
        if (config.record_beta && method == Method::FdmFlmm && beta.size() > 0) {
          BetaSample bs;
          bs.n = task.cell.n;
          bs.n_i = task.cell.n_i;
          bs.tr = task.cell.tr;
          bs.data_model = task.cell.model;
          bs.replicate = task.replicate;
          bs.beta = beta;
          outputs[t].betas.push_back(std::move(bs));
        }
      } catch (const std::exception& e) {
        FailureRecord f;
        f.n = task.cell.n;
        f.n_i = task.cell.n_i;
        f.tr = task.cell.tr;
        f.data_model = task.cell.model;
        f.replicate = task.replicate;
        f.method = to_string(method);
        f.reason = e.what();
        outputs[t].failures.push_back(std::move(f));
      }
    }
  });

  ExperimentResult result;
  for (auto& o : outputs) {
    for (auto& r : o.rows) result.rows.push_back(std::move(r));
    for (auto& b : o.betas) result.betas.push_back(std::move(b));
    for (auto& f : o.failures) result.failures.push_back(std::move(f));
  }
  for (const auto& c : cells) {
    int failures = 0;
    for (const auto& f : result.failures)
      if (f.n == c.n && f.n_i == c.n_i && f.tr == c.tr && f.data_model == c.model) ++failures;
    if (failures > config.failure_cell_fraction * config.replications *
                       static_cast<double>(config.methods.size())) {
      result.flagged_cells.push_back("n=" + std::to_string(c.n) + " n_i=" +
                                     std::to_string(c.n_i) + " tr=" + std::to_string(c.tr) +
                                     " model=" + to_string(c.model));
    }
  }
  return result;
}

// Median of a metric across replicates of one cell and method.
inline double metric_median(const std::vector<ResultRow>& rows, const std::string& method,
                            const std::string& metric) {
  std::vector<double> values;
  for (const auto& r : rows)
    if (r.method == method && r.metric == metric) values.push_back(r.value);
  if (values.empty()) throw std::invalid_argument("metric_median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace fdm
