#pragma once

// Accuracy and uncertainty-quality scores for Gaussian predictive
// distributions: MSE, regression calibration error, sharpness.

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "lupindp/errors.hpp"

namespace lupindp {

using Index = Eigen::Index;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

// One entry per scalar target: predictive CDF F_t = N(mean_t, scale_t²).
template <typename S>
struct BasicForecastSet {
  ArrayX<S> target;
  ArrayX<S> mean;
  ArrayX<S> scale;

  Index size() const { return target.size(); }

  void validate() const {
    if (target.size() == 0) throw ContractError("forecast set is empty");
    if (mean.size() != target.size() || scale.size() != target.size())
      throw DimensionError("forecast set columns have different lengths");
    if ((scale <= S(0)).any()) throw DomainError("forecast scales must be positive");
  }
};

template <typename S>
struct BasicCalibrationCurve {
  ArrayX<S> levels;
  ArrayX<S> frequencies;
};

using ForecastSet = BasicForecastSet<double>;
using CalibrationCurve = BasicCalibrationCurve<double>;

template <typename S>
S standard_normal_cdf(S z) {
  return S(0.5) * std::erfc(-z / std::sqrt(S(2)));
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar mse(const Eigen::ArrayBase<DerivedA>& predicted, const Eigen::ArrayBase<DerivedB>& target) {
  if (predicted.size() == 0) throw ContractError("mse of an empty set");
  if (predicted.size() != target.size()) throw DimensionError("mse: prediction and target counts differ");
  return (predicted.derived() - target.derived()).square().mean();
}

// p_j = j / (m + 1), j = 1..m.
template <typename S = double>
ArrayX<S> uniform_levels(Index m = 19) {
  if (m < 1) throw ConfigError("need at least one confidence level");
  ArrayX<S> levels(m);
  for (Index j = 0; j < m; ++j) levels(j) = static_cast<S>(j + 1) / static_cast<S>(m + 1);
  return levels;
}

template <typename S>
void validate_levels(const ArrayX<S>& levels) {
  if (levels.size() == 0) throw ConfigError("confidence level set is empty");
  for (Index j = 0; j < levels.size(); ++j) {
    if (!(levels(j) > S(0) && levels(j) <= S(1))) throw ConfigError("confidence levels must lie in (0, 1]");
    if (j > 0 && !(levels(j) > levels(j - 1))) throw ConfigError("confidence levels must be strictly increasing");
  }
}

// Fraction of targets whose predictive CDF value F_t(y_t) is ≤ p_j.
template <typename S>
BasicCalibrationCurve<S> empirical_frequencies(const BasicForecastSet<S>& f, const ArrayX<S>& levels) {
  f.validate();
  validate_levels(levels);
  const ArrayX<S> cdf = ((f.target - f.mean) / f.scale).unaryExpr([](S z) { return standard_normal_cdf(z); });
  BasicCalibrationCurve<S> curve{levels, ArrayX<S>(levels.size())};
  const auto n = static_cast<S>(f.size());
  for (Index j = 0; j < levels.size(); ++j) curve.frequencies(j) = static_cast<S>((cdf <= levels(j)).count()) / n;
  return curve;
}

// Σ_j (p_j − p̂_j)²
template <typename S>
S calibration_error(const BasicCalibrationCurve<S>& curve) {
  if (curve.levels.size() != curve.frequencies.size()) throw DimensionError("calibration curve length mismatch");
  return (curve.levels - curve.frequencies).square().sum();
}

template <typename S>
S calibration_error(const BasicForecastSet<S>& f, const ArrayX<S>& levels) {
  return calibration_error(empirical_frequencies(f, levels));
}

// Mean predictive variance.
template <typename S>
S sharpness(const BasicForecastSet<S>& f) {
  f.validate();
  return f.scale.square().mean();
}

void write_calibration_csv(const std::filesystem::path& path, const CalibrationCurve& curve);

}  // namespace lupindp
