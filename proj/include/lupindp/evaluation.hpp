#pragma once

// Test-time protocols. Unstarred: a sparse random context per series and no
// privileged information. Starred: the full series as context and, for
// models trained with it, the privileged value.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lupindp/dynamics.hpp"
#include "lupindp/metrics.hpp"
#include "lupindp/model.hpp"
#include "lupindp/training.hpp"

namespace lupindp {

struct ForecastQuery {
  const TrajectoryRecord* series = nullptr;
  std::vector<Index> context;
  std::optional<double> pi;
};

// Moment-matched predictive distribution at every point of a series.
struct SeriesPrediction {
  Matrix mean;      // points × observation dim
  Matrix variance;  // points × observation dim
};

using Forecaster = std::function<std::vector<SeriesPrediction>(std::span<const ForecastQuery>)>;

struct EvaluationProtocol {
  bool starred = false;
  int samples = 32;  // z draws mixed per prediction
  Index context_min = 1;
  Index context_max = 10;
  std::uint64_t seed = 0;
  Index chunk_size = 32;  // series per forward pass

  void validate() const;
};

struct EvaluationReport {
  Index series_count = 0;
  double mse = 0.0;
  double mse_stderr = 0.0;  // across series
  double calibration_error = 0.0;
  double sharpness = 0.0;
  CalibrationCurve curve;
  ForecastSet forecasts;
};

// Uniform mixture of `samples` single-z predictions per series, reported by
// its per-point mean and variance.
Forecaster model_forecaster(const ModelParams& params, int samples, std::uint64_t seed, Index chunk_size = 32);

// Builds queries per the protocol and scores the forecaster over the pooled
// scalar targets. π is attached only when `supply_pi` and starred.
EvaluationReport evaluate_forecaster(const Forecaster& forecaster, std::span<const TrajectoryRecord> data,
                                     const EvaluationProtocol& protocol, bool supply_pi);

EvaluationReport evaluate(const ModelParams& params, TrainingMode mode, std::span<const TrajectoryRecord> data,
                          const EvaluationProtocol& protocol);

}  // namespace lupindp
