#pragma once

#include <cmath>
#include <stdexcept>

namespace fdm {

inline constexpr double kArrheniusConstant = 11604.52;  // K (eV / Boltzmann)
inline constexpr double kCelsiusToKelvin = 273.15;
inline constexpr double kBaselineTempC = 24.0;
inline constexpr double kBaselineDischargeA = 2.0;
inline constexpr double kBaselineStopV = 2.0;

// Arrhenius transform of temperature, zero at the 24 C baseline.
inline double arrhenius_z1(double temp_c) {
  if (temp_c <= -kCelsiusToKelvin)
    throw std::invalid_argument("arrhenius_z1: temperature at or below absolute zero");
  return kArrheniusConstant / (temp_c + kCelsiusToKelvin) -
         kArrheniusConstant / (kBaselineTempC + kCelsiusToKelvin);
}

// Power-law transform log(value/baseline), zero at the baseline.
inline double powerlaw_z(double value, double baseline) {
  if (value <= 0.0 || baseline <= 0.0)
    throw std::invalid_argument("powerlaw_z: value and baseline must be positive");
  return std::log(value / baseline);
}

// Rest-period covariate exp(-1/delta), delta in hours. The value at
// delta = 0 is the continuous limit 0 (first cycles carry no rest).
inline double rest_covariate(double delta_hours) {
  if (delta_hours < 0.0) throw std::invalid_argument("rest_covariate: negative rest period");
  if (delta_hours == 0.0) return 0.0;
  return std::exp(-1.0 / delta_hours);
}

}  // namespace fdm
