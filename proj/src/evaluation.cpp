#include "lupindp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lupindp {

void EvaluationProtocol::validate() const {
  if (samples < 1) throw ConfigError("evaluation needs at least one sample");
  if (context_min < 1 || context_max < context_min) throw ConfigError("invalid evaluation context range");
  if (chunk_size < 1) throw ConfigError("chunk size must be positive");
}

namespace {

Rng stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return Rng(seq);
}

}  // namespace

Forecaster model_forecaster(const ModelParams& params, int samples, std::uint64_t seed, Index chunk_size) {
  if (samples < 1) throw ConfigError("evaluation needs at least one sample");
  return [params, samples, seed, chunk_size](std::span<const ForecastQuery> queries) {
    Rng rng = stream(seed, 1);
    const Index d = params.config.observation_dim;
    std::vector<SeriesPrediction> out;
    out.reserve(queries.size());
    for (std::size_t start = 0; start < queries.size(); start += static_cast<std::size_t>(chunk_size)) {
      const auto chunk = queries.subspan(start, std::min(queries.size() - start, static_cast<std::size_t>(chunk_size)));
      const auto& times = chunk.front().series->times;
      const auto n_points = static_cast<Index>(times.size());
      std::vector<ObservationSet> contexts;
      std::vector<double> pis;
      const bool with_pi = chunk.front().pi.has_value();
      for (const auto& q : chunk) {
        if (q.series->times != times) throw ContractError("forecast chunk mixes time grids");
        if (q.series->values.cols() != d) throw ConfigError("dataset observation dim does not match the checkpoint");
        if (q.pi.has_value() != with_pi) throw ContractError("forecast chunk mixes privileged and plain queries");
        contexts.push_back(select_observations(*q.series, q.context));
        if (with_pi) pis.push_back(*q.pi);
      }
      const auto n = static_cast<Index>(chunk.size());
      Matrix sum_mean = Matrix::Zero(n * n_points, d);
      Matrix sum_mean_sq = Matrix::Zero(n * n_points, d);
      Matrix sum_var = Matrix::Zero(n * n_points, d);
      for (int s = 0; s < samples; ++s) {
        Tape tape;
        BoundModel model(tape, params, false);
        std::optional<std::span<const double>> pi;
        if (with_pi) pi = std::span<const double>(pis);
        const ForwardResult fwd = model.forward(contexts, pi, times, rng, true);
        for (Index k = 0; k < n_points; ++k) {
          const Matrix& mu = fwd.predictive.mean[static_cast<std::size_t>(k)].value();
          const Matrix& sigma = fwd.predictive.scale[static_cast<std::size_t>(k)].value();
          for (Index b = 0; b < n; ++b) {
            const Index row = b * n_points + k;
            sum_mean.row(row) += mu.row(b);
            sum_mean_sq.row(row) += mu.row(b).cwiseProduct(mu.row(b));
            sum_var.row(row) += sigma.row(b).cwiseProduct(sigma.row(b));
          }
        }
      }
      const double inv = 1.0 / samples;
      for (Index b = 0; b < n; ++b) {
        SeriesPrediction p;
        p.mean = sum_mean.middleRows(b * n_points, n_points) * inv;
        const Matrix spread =
            (sum_mean_sq.middleRows(b * n_points, n_points) * inv - p.mean.cwiseProduct(p.mean)).cwiseMax(0.0);
        p.variance = sum_var.middleRows(b * n_points, n_points) * inv + spread;
        out.push_back(std::move(p));
      }
    }
    return out;
  };
}

EvaluationReport evaluate_forecaster(const Forecaster& forecaster, std::span<const TrajectoryRecord> data,
                                     const EvaluationProtocol& protocol, bool supply_pi) {
  protocol.validate();
  if (data.empty()) throw ContractError("evaluation set is empty");
  Rng rng = stream(protocol.seed, 0);
  std::vector<ForecastQuery> queries;
  queries.reserve(data.size());
  for (const auto& series : data) {
    ForecastQuery q;
    q.series = &series;
    const auto n_points = static_cast<Index>(series.times.size());
    if (protocol.starred) {
      q.context.resize(static_cast<std::size_t>(n_points));
      std::iota(q.context.begin(), q.context.end(), Index{0});
      if (supply_pi) q.pi = series.pi;
    } else {
      const Index hi = std::min(protocol.context_max, n_points);
      const Index size = std::uniform_int_distribution<Index>(std::min(protocol.context_min, hi), hi)(rng);
      std::vector<Index> pool(static_cast<std::size_t>(n_points));
      std::iota(pool.begin(), pool.end(), Index{0});
      for (Index i = 0; i < size; ++i)
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(std::uniform_int_distribution<Index>(i, n_points - 1)(rng))]);
      pool.resize(static_cast<std::size_t>(size));
      std::sort(pool.begin(), pool.end());
      q.context = std::move(pool);
    }
    queries.push_back(std::move(q));
  }

  const std::vector<SeriesPrediction> preds = forecaster(queries);
  if (preds.size() != data.size()) throw ContractError("forecaster returned the wrong number of predictions");

  Index total = 0;
  for (const auto& s : data) total += s.values.size();
  EvaluationReport report;
  report.series_count = static_cast<Index>(data.size());
  ForecastSet& f = report.forecasts;
  f.target.resize(total);
  f.mean.resize(total);
  f.scale.resize(total);
  std::vector<double> per_series;
  Index at = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Matrix& y = data[i].values;
    const SeriesPrediction& p = preds[i];
    if (p.mean.rows() != y.rows() || p.mean.cols() != y.cols() || p.variance.rows() != y.rows() ||
        p.variance.cols() != y.cols())
      throw DimensionError("prediction shape does not match series " + std::to_string(data[i].id));
    for (Index r = 0; r < y.rows(); ++r) {
      for (Index c = 0; c < y.cols(); ++c, ++at) {
        f.target(at) = y(r, c);
        f.mean(at) = p.mean(r, c);
        f.scale(at) = std::sqrt(p.variance(r, c));
      }
    }
    per_series.push_back((p.mean - y).squaredNorm() / static_cast<double>(y.size()));
  }

  report.mse = mse(f.mean, f.target);
  if (per_series.size() > 1) {
    const double m = std::accumulate(per_series.begin(), per_series.end(), 0.0) / static_cast<double>(per_series.size());
    double ss = 0.0;
    for (double v : per_series) ss += (v - m) * (v - m);
    report.mse_stderr = std::sqrt(ss / static_cast<double>(per_series.size() - 1)) /
                        std::sqrt(static_cast<double>(per_series.size()));
  }
  report.curve = empirical_frequencies(f, uniform_levels<double>(19));
  report.calibration_error = calibration_error(report.curve);
  report.sharpness = sharpness(f);
  return report;
}

EvaluationReport evaluate(const ModelParams& params, TrainingMode mode, std::span<const TrajectoryRecord> data,
                          const EvaluationProtocol& protocol) {
  protocol.validate();
  const Forecaster forecaster = model_forecaster(params, protocol.samples, protocol.seed, protocol.chunk_size);
  return evaluate_forecaster(forecaster, data, protocol, mode == TrainingMode::Lupi);
}

}  // namespace lupindp
