#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>

#include "fdm/pipeline.hpp"
#include "fdm/simulate.hpp"

using namespace fdm;

namespace {

PipelineConfig lme_config(double tr = 80.0) {
  PipelineConfig cfg;
  cfg.train_percent = tr;
  cfg.mlmm_covariates = {"z"};
  cfg.eod_model = EodModelKind::Lme;
  cfg.eod_formula = EodFormula::standard({"z"});
  return cfg;
}

}  // namespace

TEST_CASE("split boundary follows the floor-plus-one rule", "[pipeline]") {
  CHECK(split_cycle(50, 80.0) == 41);
  CHECK(split_cycle(100, 50.0) == 51);
  CHECK(split_cycle(33, 75.0) == 25);  // floor(24.75) + 1
  CHECK(split_cycle(60, 75.0) == 46);
}

TEST_CASE("pipeline tags sources by the split and keeps the observed zero", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 8;
  scfg.n_i = 30;
  scfg.seed = 100;
  const SimulatedData sim = generate_dataset(scfg);
  const PipelineResult res = run_fdm_pipeline(sim.dataset, lme_config());

  REQUIRE(res.units.size() == 8);
  bool some_nonzero_model_first = false;
  for (const auto& u : res.units) {
    CHECK(u.split == split_cycle(30, 80.0));
    REQUIRE(u.model_path.entries.size() == 30);
    for (const auto& e : u.model_path.entries) {
      if (e.cycle < u.split)
        CHECK(e.source == PathSource::Fitted);
      else
        CHECK(e.source == PathSource::Predicted);
      CHECK(std::isfinite(e.d));
    }
    // observed degradation at cycle 1 is zero by construction; the fitted
    // value uses the estimated norm and need not be
    CHECK(u.observed_path.entries[0].d == 0.0);
    if (u.model_path.entries[0].d != 0.0) some_nonzero_model_first = true;
  }
  CHECK(some_nonzero_model_first);
}

TEST_CASE("pipeline predictions track simulated degradation", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 15;
  scfg.n_i = 40;
  scfg.seed = 2100;
  const SimulatedData sim = generate_dataset(scfg);
  const PipelineResult res = run_fdm_pipeline(sim.dataset, lme_config());

  std::vector<std::vector<double>> deg_hat(res.units.size());
  std::vector<int> splits;
  for (std::size_t i = 0; i < res.units.size(); ++i) {
    for (const auto& e : res.units[i].model_path.entries) deg_hat[i].push_back(e.d);
    splits.push_back(res.units[i].split);
  }
  const Metrics m = evaluate_scalar_series(sim.truth.degradation, deg_hat, splits);
  // the degradation scale here is ~0.1; predictions should sit well inside
  CHECK(m.rmse < 0.05);
  CHECK(m.rmspe < 0.1);
}

TEST_CASE("pipeline is deterministic", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 6;
  scfg.n_i = 20;
  scfg.seed = 5;
  const SimulatedData sim = generate_dataset(scfg);
  const PipelineResult a = run_fdm_pipeline(sim.dataset, lme_config());
  const PipelineResult b = run_fdm_pipeline(sim.dataset, lme_config());
  for (std::size_t i = 0; i < a.units.size(); ++i)
    for (std::size_t c = 0; c < a.units[i].model_path.entries.size(); ++c) {
      const double da = a.units[i].model_path.entries[c].d;
      const double db = b.units[i].model_path.entries[c].d;
      CHECK(std::memcmp(&da, &db, sizeof(double)) == 0);
    }
}

TEST_CASE("flmm pipeline runs end to end", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 8;
  scfg.n_i = 20;
  scfg.eod_model = SimEodModel::Flmm;
  scfg.seed = 12;
  const SimulatedData sim = generate_dataset(scfg);

  PipelineConfig cfg;
  cfg.train_percent = 80.0;
  cfg.mlmm_covariates = {"z"};
  cfg.eod_model = EodModelKind::Flmm;
  cfg.eod_formula.random_slopes = {Term::prev_eod()};
  cfg.eod_formula.fixed_only = {Term::rest()};
  cfg.flmm.lambdas = {{1e-2, 1e-2}};
  const PipelineResult res = run_fdm_pipeline(sim.dataset, cfg);
  REQUIRE(res.flmm_fit.has_value());
  for (const auto& u : res.units)
    for (const auto& e : u.model_path.entries) CHECK(std::isfinite(e.d));
}

TEST_CASE("threshold crossings are flagged", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 6;
  scfg.n_i = 25;
  scfg.seed = 77;
  const SimulatedData sim = generate_dataset(scfg);
  PipelineConfig cfg = lme_config();
  cfg.failure_threshold = 0.05;
  const PipelineResult res = run_fdm_pipeline(sim.dataset, cfg);
  int flagged = 0, wrong = 0;
  for (const auto& u : res.units)
    for (const auto& e : u.model_path.entries) {
      if (e.exceeds_threshold) ++flagged;
      if (e.exceeds_threshold != (e.d > 0.05)) ++wrong;
    }
  CHECK(wrong == 0);
  CHECK(flagged > 0);

  PipelineConfig none = lme_config();
  none.failure_threshold = 1e9;
  const PipelineResult res2 = run_fdm_pipeline(sim.dataset, none);
  for (const auto& u : res2.units)
    for (const auto& e : u.model_path.entries) CHECK(!e.exceeds_threshold);
}

TEST_CASE("stage failures carry the stage name", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 5;
  scfg.n_i = 20;
  scfg.seed = 9;
  SimulatedData sim = generate_dataset(scfg);
  // constant covariate makes the score-model design singular
  for (auto& unit : sim.dataset.units)
    for (auto& rec : unit.cycles) rec.covariates.set_extra("z", 0.0);
  try {
    run_fdm_pipeline(sim.dataset, lme_config());
    FAIL("expected a stage error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("pipeline stage mlmm") != std::string::npos);
  }
}

TEST_CASE("metric formulas and denominators", "[pipeline]") {
  // single unit, 3 train + 2 test cycles with errors 0.3 and 0.4
  std::vector<std::vector<double>> truth = {{1.0, 1.0, 1.0, 1.0, 1.0}};
  std::vector<std::vector<double>> est = {{1.0, 1.0, 1.0, 1.3, 1.4}};
  const Metrics m = evaluate_scalar_series(truth, est, {4});
  CHECK(m.rmse == 0.0);
  CHECK(m.rmspe == Catch::Approx(std::sqrt((0.09 + 0.16) / 2.0)).epsilon(1e-12));
  CHECK(m.rmspe == Catch::Approx(0.3536).margin(5e-5));

  // perfect predictions
  const Metrics z = evaluate_scalar_series(truth, truth, {4});
  CHECK(z.rmse == 0.0);
  CHECK(z.rmspe == 0.0);

  // empty test set rejected
  CHECK_THROWS_AS(evaluate_scalar_series(truth, est, {6}), std::invalid_argument);
}

TEST_CASE("curve metric matches a finer-grid oracle", "[pipeline]") {
  const auto diff_at = [](double t) { return 0.01 * std::cos(3.14159265358979 * t); };
  const int g = 300;
  std::vector<std::vector<ScaledCurve>> truth(1), est(1);
  for (int c = 0; c < 4; ++c) {
    ScaledCurve a, b;
    a.values.resize(g);
    b.values.resize(g);
    for (int i = 0; i < g; ++i) {
      const double t = static_cast<double>(i) / (g - 1);
      a.values(i) = 3.0 + 0.1 * t;
      b.values(i) = a.values(i) + diff_at(t) * (c + 1);
    }
    truth[0].push_back(a);
    est[0].push_back(b);
  }
  const Metrics coarse = evaluate_curves(truth, est, {3});

  const int fg = 10 * (g - 1) + 1;
  std::vector<std::vector<ScaledCurve>> truth_f(1), est_f(1);
  for (int c = 0; c < 4; ++c) {
    ScaledCurve a, b;
    a.values.resize(fg);
    b.values.resize(fg);
    for (int i = 0; i < fg; ++i) {
      const double t = static_cast<double>(i) / (fg - 1);
      a.values(i) = 3.0 + 0.1 * t;
      b.values(i) = a.values(i) + diff_at(t) * (c + 1);
    }
    truth_f[0].push_back(a);
    est_f[0].push_back(b);
  }
  const Metrics fine = evaluate_curves(truth_f, est_f, {3});
  CHECK(coarse.rmse == Catch::Approx(fine.rmse).margin(1e-6));
  CHECK(coarse.rmspe == Catch::Approx(fine.rmspe).margin(1e-6));
}

TEST_CASE("pipeline input validation", "[pipeline]") {
  SimulationConfig scfg;
  scfg.n = 4;
  scfg.n_i = 10;
  scfg.seed = 2;
  const SimulatedData sim = generate_dataset(scfg);
  PipelineConfig cfg = lme_config(0.0);
  CHECK_THROWS_AS(run_fdm_pipeline(sim.dataset, cfg), std::invalid_argument);
  cfg.train_percent = 5.0;  // split would land below 3
  CHECK_THROWS_AS(run_fdm_pipeline(sim.dataset, cfg), std::invalid_argument);
}
