#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/grid.hpp"
#include "fdm/types.hpp"

namespace fdm {

// Truncation rule: either a fixed number of components or the smallest K
// whose cumulative variance fraction reaches a threshold.
struct FpcaSelection {
  std::optional<int> fixed_k = 3;
  std::optional<double> variance_threshold;  // in (0,1]

  static FpcaSelection fixed(int k) { return {k, std::nullopt}; }
  static FpcaSelection threshold(double frac) { return {std::nullopt, frac}; }
};

struct FpcaOptions {
  FpcaSelection selection;
  // Optional pre-smoothing hook applied to each curve before the covariance
  // is formed (off by default; the data are dense).
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> presmooth;
};

// Mean function plus the leading eigenpairs of the sample covariance of the
// scaled curves. Eigenfunctions are orthonormal in L2[0,1] under trapezoid
// quadrature; eigenvalues are non-increasing.
struct FpcaModel {
  int grid_size = 0;
  Eigen::VectorXd mean;               // mu(t_g)
  Eigen::MatrixXd eigenfunctions;     // G x K, column j = phi_j
  Eigen::VectorXd eigenvalues;        // K, lambda_1 >= ... >= lambda_K
  Eigen::VectorXd explained_fraction; // cumulative variance ratio, length K
  double total_variance = 0.0;        // integrated sample variance
  bool degenerate = false;            // all-zero covariance (identical curves)

  int k() const { return static_cast<int>(eigenvalues.size()); }
};

struct ScoreVector {
  std::string unit_id;
  int cycle = 0;
  Eigen::VectorXd scores;  // gamma_ic, length K
};

namespace detail {

// Deterministic sign rule: make the quadrature integral of each
// eigenfunction non-negative; break ties by the first nonzero grid value.
inline void fix_eigenfunction_sign(Eigen::Ref<Eigen::VectorXd> phi, const Eigen::VectorXd& w) {
  const double integral = w.dot(phi);
  double sign = 0.0;
  if (std::abs(integral) > 1e-12) {
    sign = integral >= 0.0 ? 1.0 : -1.0;
  } else {
    for (Eigen::Index g = 0; g < phi.size(); ++g) {
      if (std::abs(phi(g)) > 1e-12) {
        sign = phi(g) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    if (sign == 0.0) sign = 1.0;
  }
  phi *= sign;
}

}  // namespace detail

// Sample-covariance FPCA on a dense common grid. The covariance operator is
// discretized with trapezoid weights W; the symmetric eigenproblem is solved
// for W^{1/2} Sigma W^{1/2} and eigenvectors are mapped back so that
// int phi_j phi_k = delta_jk under the same quadrature rule.
inline FpcaModel fit_fpca(const std::vector<ScaledCurve>& curves, const FpcaOptions& options = {}) {
  const int n = static_cast<int>(curves.size());
  if (n < 2) throw std::invalid_argument("fit_fpca: need at least 2 curves");
  const int g = curves.front().grid_size();
  for (const auto& c : curves) {
    if (c.grid_size() != g) throw std::invalid_argument("fit_fpca: curves on different grids");
    if (!c.values.allFinite()) throw std::invalid_argument("fit_fpca: non-finite curve values");
  }

  Eigen::MatrixXd data(n, g);
  for (int i = 0; i < n; ++i) {
    if (options.presmooth)
      data.row(i) = options.presmooth(curves[i].values).transpose();
    else
      data.row(i) = curves[i].values.transpose();
  }

  FpcaModel model;
  model.grid_size = g;
  model.mean = data.colwise().mean();
  data.rowwise() -= model.mean.transpose();

  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n - 1);
  const Eigen::VectorXd w = trapezoid_weights(g);
  const Eigen::VectorXd sqrt_w = w.array().sqrt();

  Eigen::MatrixXd b = cov;
  b.array().colwise() *= sqrt_w.array();
  b.array().rowwise() *= sqrt_w.transpose().array();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
  if (eig.info() != Eigen::Success) throw std::runtime_error("fit_fpca: eigendecomposition failed");

  // SelfAdjointEigenSolver sorts ascending; take from the top.
  const Eigen::VectorXd all_values = eig.eigenvalues().reverse();
  model.total_variance = w.dot(cov.diagonal());

  if (all_values(0) <= 1e-14 * std::max(1.0, model.total_variance)) {
    model.degenerate = true;
  }

  int k = 0;
  if (options.selection.fixed_k) {
    k = *options.selection.fixed_k;
    if (k < 1) throw std::invalid_argument("fit_fpca: K must be >= 1");
    if (k > n) throw std::invalid_argument("fit_fpca: fewer curves than requested K");
    if (k > g) throw std::invalid_argument("fit_fpca: K exceeds grid size");
  } else if (options.selection.variance_threshold) {
    const double thr = *options.selection.variance_threshold;
    if (!(thr > 0.0 && thr <= 1.0))
      throw std::invalid_argument("fit_fpca: variance threshold must be in (0,1]");
    const double total = std::max(all_values.sum(), 1e-300);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < all_values.size(); ++j) {
      acc += std::max(all_values(j), 0.0);
      ++k;
      if (acc / total >= thr) break;
    }
  } else {
    throw std::invalid_argument("fit_fpca: no truncation rule given");
  }

  model.eigenvalues = all_values.head(k).cwiseMax(0.0);
  model.eigenfunctions.resize(g, k);
  const double eigen_total = std::max(all_values.cwiseMax(0.0).sum(), 1e-300);
  model.explained_fraction.resize(k);
  double acc = 0.0;
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd phi = eig.eigenvectors().col(g - 1 - j).array() / sqrt_w.array();
    detail::fix_eigenfunction_sign(phi, w);
    model.eigenfunctions.col(j) = phi;
    acc += model.eigenvalues(j);
    model.explained_fraction(j) = acc / eigen_total;
  }
  return model;
}

// FPC scores by trapezoid quadrature of (x - mu) * phi_j.
inline ScoreVector project_scores(const FpcaModel& model, const ScaledCurve& curve) {
  if (curve.grid_size() != model.grid_size)
    throw std::invalid_argument("project_scores: grid mismatch");
  const Eigen::VectorXd w = trapezoid_weights(model.grid_size);
  const Eigen::VectorXd centered = curve.values - model.mean;
  ScoreVector sv;
  sv.unit_id = curve.unit_id;
  sv.cycle = curve.cycle;
  sv.scores = model.eigenfunctions.transpose() * (w.asDiagonal() * centered);
  return sv;
}

// Truncated reconstruction x = mu + sum_j gamma_j phi_j.
inline ScaledCurve reconstruct_curve(const FpcaModel& model, const ScoreVector& scores) {
  if (scores.scores.size() != model.k())
    throw std::invalid_argument("reconstruct_curve: score length does not match K");
  ScaledCurve out;
  out.unit_id = scores.unit_id;
  out.cycle = scores.cycle;
  out.values = model.mean + model.eigenfunctions * scores.scores;
  return out;
}

}  // namespace fdm
