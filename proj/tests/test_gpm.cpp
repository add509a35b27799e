#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fdm/gpm.hpp"
#include "fdm/rng.hpp"

using namespace fdm;

namespace {

GpmUnit make_unit(const std::string& id, int n, const std::function<double(int)>& path,
                  double z = 0.0) {
  GpmUnit u;
  u.unit_id = id;
  for (int c = 1; c <= n; ++c) {
    u.cycles.push_back(c);
    u.d.push_back(path(c));
    u.rest_h.push_back(c == 1 ? 0.0 : 1.0);
    CovariateVector cov;
    cov.set_extra("z", z);
    u.covariates.push_back(cov);
  }
  return u;
}

}  // namespace

TEST_CASE("noiseless linear paths are recovered exactly", "[gpm]") {
  std::vector<GpmUnit> units;
  for (int i = 0; i < 4; ++i)
    units.push_back(make_unit("u" + std::to_string(i), 20,
                              [](int c) { return 0.001 * c; }));
  GpmConfig cfg;  // no covariates
  const GpmFit fit = fit_gpm(units, cfg);
  CHECK(fit.beta1 == Catch::Approx(0.001).margin(1e-8));
  CHECK(fit.beta0 == Catch::Approx(0.0).margin(1e-8));
  CHECK(fit.sigma2_xi < 1e-8);
}

TEST_CASE("prediction with zero covariates is the random-slope line", "[gpm]") {
  GpmFit fit;
  fit.form = GpmForm::LinearNormal;
  fit.beta0 = 0.01;
  fit.beta1 = 0.002;
  fit.beta_z = Eigen::VectorXd::Zero(0);
  fit.unit_ids = {"a"};
  fit.xi = Eigen::VectorXd::Constant(1, 0.0005);

  std::vector<FutureCycle> horizon;
  for (int c = 6; c <= 9; ++c) {
    FutureCycle fc;
    fc.cycle = c;
    horizon.push_back(fc);
  }
  const auto preds = predict_gpm(fit, "a", 5, 0.0, horizon);
  for (std::size_t s = 0; s < preds.size(); ++s)
    CHECK(preds[s] == Catch::Approx(0.01 + 0.0025 * (6.0 + s)).margin(1e-14));

  // population prediction drops the random slope
  const auto pop = predict_gpm(fit, "a", 5, 0.0, horizon, true);
  CHECK(pop[0] == Catch::Approx(0.01 + 0.002 * 6.0).margin(1e-14));
}

TEST_CASE("recursive lagged prediction matches a hand-rolled oracle", "[gpm]") {
  Rng rng(77);
  std::vector<GpmUnit> units;
  for (int i = 0; i < 10; ++i) {
    GpmUnit u;
    u.unit_id = "u" + std::to_string(i);
    const double z = rng.uniform();
    const double xi = rng.normal() * 0.0002;
    double prev = 0.0;
    for (int c = 1; c <= 40; ++c) {
      u.cycles.push_back(c);
      u.rest_h.push_back(c == 1 ? 0.0 : 1.0);
      CovariateVector cov;
      cov.set_extra("z", z);
      u.covariates.push_back(cov);
      const double d = 0.001 + (0.002 + xi) * c + 0.3 * prev + 0.01 * z +
                       rng.normal() * 0.001;
      u.d.push_back(d);
      prev = d;
    }
    units.push_back(std::move(u));
  }
  GpmConfig cfg;
  cfg.covariates = {Term::prev_degradation(), Term::rest(), Term::covariate("z")};
  const GpmFit fit = fit_gpm(units, cfg);

  const GpmUnit& u = units[3];
  std::vector<FutureCycle> horizon;
  for (int c = 41; c <= 50; ++c) {
    FutureCycle fc;
    fc.cycle = c;
    fc.rest_h = 1.0;
    fc.covariates = u.covariates.front();
    horizon.push_back(fc);
  }
  const auto preds = predict_gpm(fit, u.unit_id, 40, u.d.back(), horizon);

  const double xi_hat = fit.unit_effect(u.unit_id);
  const double z = u.covariates.front().value("z");
  double lag = u.d.back();
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const double c = 41.0 + static_cast<double>(s);
    const double expected = fit.beta0 + (fit.beta1 + xi_hat) * c + fit.beta_z(0) * lag +
                            fit.beta_z(1) * rest_covariate(1.0) + fit.beta_z(2) * z;
    REQUIRE(std::abs(preds[s] - expected) < 1e-10);
    lag = expected;
  }
}

TEST_CASE("lognormal form with zero effect reproduces the fixed path", "[gpm]") {
  GpmFit normal;
  normal.form = GpmForm::LinearNormal;
  normal.beta0 = 0.01;
  normal.beta1 = 0.002;
  normal.beta_z = Eigen::VectorXd::Zero(0);
  normal.unit_ids = {"a"};
  normal.xi = Eigen::VectorXd::Zero(1);

  GpmFit lognormal = normal;
  lognormal.form = GpmForm::LinearLognormal;

  std::vector<FutureCycle> horizon;
  for (int c = 1; c <= 5; ++c) {
    FutureCycle fc;
    fc.cycle = c;
    horizon.push_back(fc);
  }
  const auto a = predict_gpm(normal, "a", 0, 0.0, horizon);
  const auto b = predict_gpm(lognormal, "a", 0, 0.0, horizon);
  for (std::size_t s = 0; s < a.size(); ++s) CHECK(a[s] == b[s]);

  // population-level mean paths coincide when the random variance is zero
  const auto ap = predict_gpm(normal, "a", 0, 0.0, horizon, true);
  const auto bp = predict_gpm(lognormal, "a", 0, 0.0, horizon, true);
  for (std::size_t s = 0; s < a.size(); ++s) CHECK(ap[s] == bp[s]);
}

TEST_CASE("lognormal laplace fit recovers a multiplicative slope", "[gpm]") {
  Rng rng(909);
  std::vector<GpmUnit> units;
  for (int i = 0; i < 25; ++i) {
    const double zeta = rng.normal() * 0.3;
    GpmUnit u = make_unit("u" + std::to_string(i), 30, [&](int c) { return 0.0; });
    for (int c = 1; c <= 30; ++c)
      u.d[c - 1] = 0.005 + 0.002 * std::exp(zeta) * c + rng.normal() * 0.002;
    units.push_back(std::move(u));
  }
  GpmConfig cfg;
  cfg.form = GpmForm::LinearLognormal;
  const GpmFit fit = fit_gpm(units, cfg);
  CHECK(fit.form == GpmForm::LinearLognormal);
  CHECK(fit.beta1 == Catch::Approx(0.002).epsilon(0.25));
  CHECK(std::sqrt(fit.sigma2_xi) == Catch::Approx(0.3).epsilon(0.5));
  CHECK(std::isfinite(fit.loglik));
}

TEST_CASE("fit is invariant to unit relabeling order", "[gpm]") {
  Rng rng(31);
  std::vector<GpmUnit> units;
  for (int i = 0; i < 6; ++i) {
    const double xi = rng.normal() * 0.0005;
    units.push_back(make_unit("u" + std::to_string(i), 25, [&, xi](int c) {
      return 0.01 + (0.001 + xi) * c;
    }));
    for (auto& d : units.back().d) d += rng.normal() * 0.0005;
  }
  GpmConfig cfg;
  const GpmFit a = fit_gpm(units, cfg);
  std::vector<GpmUnit> reversed(units.rbegin(), units.rend());
  const GpmFit b = fit_gpm(reversed, cfg);
  CHECK(a.beta0 == Catch::Approx(b.beta0).margin(1e-8));
  CHECK(a.beta1 == Catch::Approx(b.beta1).margin(1e-8));
  CHECK(a.sigma2_xi == Catch::Approx(b.sigma2_xi).margin(1e-10));
}
