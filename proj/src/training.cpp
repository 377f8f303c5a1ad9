#include "lupindp/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "lupindp/ops.hpp"

namespace lupindp {

std::string mode_name(TrainingMode mode) { return mode == TrainingMode::Lupi ? "lupi" : "nopi"; }

TrainingMode parse_mode(const std::string& name) {
  if (name == "lupi") return TrainingMode::Lupi;
  if (name == "nopi") return TrainingMode::Nopi;
  throw ConfigError("unknown mode '" + name + "' (expected lupi or nopi)");
}

void SplitConfig::validate() const {
  if (context_min < 1 || context_max < context_min) throw ConfigError("invalid context size range");
  if (target_min < 1 || target_max < target_min) throw ConfigError("invalid target size range");
  if (context_min > target_max) throw ConfigError("context cannot be larger than the target set");
}

namespace {

Index uniform_index(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

// First k entries of a partial Fisher-Yates shuffle, sorted.
std::vector<Index> choose(std::vector<Index> pool, Index k, Rng& rng) {
  const auto n = static_cast<Index>(pool.size());
  for (Index i = 0; i < k; ++i) std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(uniform_index(rng, i, n - 1))]);
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

ContextTargetSplit sample_split(Index n_points, Rng& rng, const SplitConfig& config) {
  config.validate();
  if (n_points < config.target_max)
    throw ConfigError("series has " + std::to_string(n_points) + " points, fewer than the maximum target size " +
                      std::to_string(config.target_max));
  std::vector<Index> all(static_cast<std::size_t>(n_points));
  std::iota(all.begin(), all.end(), Index{0});
  ContextTargetSplit split;
  split.target = choose(std::move(all), uniform_index(rng, config.target_min, config.target_max), rng);
  const Index n_target = static_cast<Index>(split.target.size());
  const Index context_size = uniform_index(rng, config.context_min, std::min(config.context_max, n_target));
  split.context = choose(split.target, context_size, rng);
  return split;
}

ObservationSet select_observations(const TrajectoryRecord& series, std::span<const Index> indices) {
  ObservationSet obs;
  obs.values.resize(static_cast<Index>(indices.size()), series.values.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index k = indices[i];
    if (k < 0 || k >= series.values.rows()) throw ContractError("observation index out of range");
    obs.times.push_back(series.times[static_cast<std::size_t>(k)]);
    obs.values.row(static_cast<Index>(i)) = series.values.row(k);
  }
  return obs;
}

LossTerms elbo_loss(const BoundModel& model, std::span<const BatchElement> batch, TrainingMode mode, Rng& rng) {
  if (batch.empty()) throw ContractError("elbo_loss on an empty batch");
  const auto& grid = batch.front().series->times;
  Index last = 0;
  std::vector<ObservationSet> targets, contexts;
  std::vector<double> pis;
  for (const auto& el : batch) {
    if (el.split.context.empty()) throw ContractError("elbo_loss: empty context set");
    if (el.split.target.empty()) throw ContractError("elbo_loss: empty target set");
    if (el.series->times != grid) throw ContractError("elbo_loss: batch series must share one time grid");
    last = std::max(last, el.split.target.back());
    targets.push_back(select_observations(*el.series, el.split.target));
    contexts.push_back(select_observations(*el.series, el.split.context));
    pis.push_back(el.series->pi);
  }

  const Tensor r_target = model.encode_and_aggregate(targets);
  const Tensor r_context = model.encode_and_aggregate(contexts);
  Tensor r_posterior;
  if (mode == TrainingMode::Lupi) {
    const Tensor r_pi = model.encode_privileged(pis);
    r_posterior = model.fuse(r_target, FusionMode::WithPrivileged, &r_pi);
  } else {
    r_posterior = model.fuse(r_target, FusionMode::NoPrivileged, nullptr);
  }
  const LatentDistribution posterior = model.latent_params(r_posterior);
  const LatentDistribution prior = model.latent_params(r_context);
  const Tensor kl = kl_diag_gaussians(posterior, prior);

  const Tensor z = reparameterized_sample(posterior, rng);
  const std::span<const double> times(grid.data(), static_cast<std::size_t>(last + 1));
  const Predictive pred = model.decode(z, times);

  // Time-major stacking: row k·B + b holds series b at grid index k.
  const auto n_batch = static_cast<Index>(batch.size());
  const Index d = model.config().observation_dim;
  Matrix y = Matrix::Zero((last + 1) * n_batch, d);
  Matrix weight = Matrix::Zero((last + 1) * n_batch, d);
  for (Index b = 0; b < n_batch; ++b) {
    const auto& el = batch[static_cast<std::size_t>(b)];
    for (Index k : el.split.target) {
      y.row(k * n_batch + b) = el.series->values.row(k);
      weight.row(k * n_batch + b).setOnes();
    }
  }
  const Tensor mean = concat_rows(std::span<const Tensor>(pred.mean));
  const Tensor scale_all = concat_rows(std::span<const Tensor>(pred.scale));
  const Tensor log_lik = gaussian_log_pdf(model.tape().constant(std::move(y)), mean, scale_all, &weight);

  LossTerms terms;
  terms.kl = kl;
  terms.nll = negate(log_lik);
  terms.loss = scale(add(kl, terms.nll), 1.0 / static_cast<double>(n_batch));
  return terms;
}

LossAndGradients loss_and_gradients(const ModelParams& params, std::span<const BatchElement> batch, TrainingMode mode,
                                    Rng& rng) {
  Tape tape;
  BoundModel model(tape, params, true);
  const LossTerms terms = elbo_loss(model, batch, mode, rng);
  tape.backward(terms.loss);
  return {terms.loss.item(), collect_gradients(model)};
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  split.validate();
}

namespace {

Rng derived_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return Rng(seq);
}

}  // namespace

double mean_loss(const ModelParams& params, std::span<const BatchElement> elements, Index batch_size,
                 TrainingMode mode, Rng& rng) {
  if (elements.empty()) throw ContractError("mean_loss over no series");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  double total = 0.0;
  for (std::size_t start = 0; start < elements.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto count = std::min(elements.size() - start, static_cast<std::size_t>(batch_size));
    Tape tape;
    BoundModel model(tape, params, false);
    const LossTerms terms = elbo_loss(model, elements.subspan(start, count), mode, rng);
    total += terms.loss.item() * static_cast<double>(count);
  }
  return total / static_cast<double>(elements.size());
}

TrainResult train(ModelParams params, std::span<const TrajectoryRecord> data, const TrainConfig& config,
                  TrainingMode mode, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  if (data.empty()) throw ConfigError("training set is empty");

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(data.size())));
  const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  if (static_cast<Index>(train_idx.size()) < config.batch_size)
    throw ConfigError("training subset (" + std::to_string(train_idx.size()) + " series) is smaller than the batch size");

  // Validation splits are drawn once so epochs are comparable.
  Rng val_split_rng = derived_rng(config.seed, 1);
  std::vector<BatchElement> val_elements;
  for (std::size_t i : val_idx)
    val_elements.push_back({&data[i], sample_split(static_cast<Index>(data[i].times.size()), val_split_rng, config.split)});

  AdamState adam;
  adam.config = config.adam;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double total = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch, ++batch_no) {
      std::vector<BatchElement> elements;
      for (std::size_t j = start; j < std::min(start + batch, train_idx.size()); ++j) {
        const auto& series = data[train_idx[j]];
        elements.push_back({&series, sample_split(static_cast<Index>(series.times.size()), rng, config.split)});
      }
      LossAndGradients step;
      try {
        step = loss_and_gradients(params, elements, mode, rng);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                            ": " + e.what());
      } catch (const IntegrationError& e) {
        throw TrainingError("integration failed at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no) + ": " + e.what());
      }
      adam_step(params.blocks(), step.gradients, adam);
      total += step.loss * static_cast<double>(elements.size());
    }
    EpochStats stats{epoch, total / static_cast<double>(train_idx.size()), std::numeric_limits<double>::quiet_NaN()};
    if (!val_elements.empty()) {
      Rng val_rng = derived_rng(config.seed, 2);
      try {
        stats.val_loss = mean_loss(params, val_elements, config.batch_size, mode, val_rng);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.params = std::move(params);
  return result;
}

void write_trace_csv(std::ostream& os, std::span<const EpochStats> trace) {
  os << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& s : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", s.epoch, s.train_loss, s.val_loss);
    os << buf;
  }
}

void write_trace_csv(const std::filesystem::path& path, std::span<const EpochStats> trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_trace_csv(os, trace);
}

}  // namespace lupindp
