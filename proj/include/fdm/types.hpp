#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fdm {

inline constexpr int kDefaultGridSize = 300;

// One discharge curve as sampled: (time, value) pairs on [0, eod].
struct RawCurve {
  std::string unit_id;
  int cycle = 0;
  std::vector<double> times;   // seconds, strictly increasing, starts at 0
  std::vector<double> values;  // volts

  double eod() const { return times.empty() ? 0.0 : times.back(); }

  void validate() const {
    if (times.size() != values.size())
      throw std::invalid_argument("RawCurve: times/values size mismatch");
    if (times.size() < 2) throw std::invalid_argument("RawCurve: need at least 2 samples");
    if (times.front() != 0.0) throw std::invalid_argument("RawCurve: first time must be 0");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1]))
        throw std::invalid_argument("RawCurve: times must be strictly increasing");
    if (!(eod() > 0.0)) throw std::invalid_argument("RawCurve: eod must be positive");
    for (double v : values)
      if (!std::isfinite(v)) throw std::invalid_argument("RawCurve: non-finite value");
  }
};

// A curve on the common unit domain, sampled on the uniform grid.
struct ScaledCurve {
  std::string unit_id;
  int cycle = 0;
  Eigen::VectorXd values;

  int grid_size() const { return static_cast<int>(values.size()); }
};

// Named covariates; z1..z3 are the standard transformed test conditions,
// extras carry anything else (e.g. a generic condition in simulations).
struct CovariateVector {
  double z1 = 0.0;
  double z2 = 0.0;
  double z3 = 0.0;
  std::vector<std::pair<std::string, double>> extras;

  bool has(const std::string& name) const {
    if (name == "z1" || name == "z2" || name == "z3") return true;
    for (const auto& [k, v] : extras)
      if (k == name) return true;
    return false;
  }

  double value(const std::string& name) const {
    if (name == "z1") return z1;
    if (name == "z2") return z2;
    if (name == "z3") return z3;
    for (const auto& [k, v] : extras)
      if (k == name) return v;
    throw std::invalid_argument("CovariateVector: unknown covariate '" + name + "'");
  }

  void set_extra(const std::string& name, double v) {
    for (auto& [k, old] : extras)
      if (k == name) {
        old = v;
        return;
      }
    extras.emplace_back(name, v);
  }
};

// Everything recorded for one cycle of one unit. Cycles are re-indexed
// contiguously 1..n_i within a unit; prev_eod of cycle 1 is 0 by convention.
struct CycleRecord {
  std::string unit_id;
  int cycle = 0;        // 1..n_i after re-indexing
  double eod_s = 0.0;   // b_ic
  double rest_h = 0.0;  // rest period before this cycle (hours); 0 for cycle 1
  double prev_eod_s = 0.0;
  CovariateVector covariates;
  ScaledCurve scaled;
};

struct UnitData {
  std::string unit_id;
  std::vector<CycleRecord> cycles;

  int n_cycles() const { return static_cast<int>(cycles.size()); }
};

struct IngestWarning {
  std::string unit_id;
  int original_cycle = 0;
  std::string reason;
};

struct Dataset {
  int grid_size = kDefaultGridSize;
  std::vector<UnitData> units;
  std::vector<IngestWarning> warnings;

  int n_units() const { return static_cast<int>(units.size()); }

  const UnitData& unit(const std::string& id) const {
    for (const auto& u : units)
      if (u.unit_id == id) return u;
    throw std::invalid_argument("Dataset: unknown unit '" + id + "'");
  }

  int total_cycles() const {
    int n = 0;
    for (const auto& u : units) n += u.n_cycles();
    return n;
  }
};

}  // namespace fdm
