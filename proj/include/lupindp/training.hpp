#pragma once

// Variational objective and the epoch loop.
//
// Per series, with targets T ⊇ context C:
//   loss = KL(q(z|T, π) ‖ q(z|C)) − Σ_{i∈T} log N(y_i; ŷ(t_i), σ_y(t_i)²),  z ~ q(z|T, π)
// q(z|C) always runs the test-time path (no π). In nopi mode the posterior
// drops π as well, which recovers the plain neural ODE process objective.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lupindp/dynamics.hpp"
#include "lupindp/model.hpp"
#include "lupindp/nn.hpp"

namespace lupindp {

enum class TrainingMode { Lupi, Nopi };

std::string mode_name(TrainingMode mode);
TrainingMode parse_mode(const std::string& name);

struct SplitConfig {
  Index context_min = 1;
  Index context_max = 10;
  Index target_min = 10;
  Index target_max = 50;

  void validate() const;
};

// Sorted, unique indices into a series' time grid; context ⊆ target.
struct ContextTargetSplit {
  std::vector<Index> context;
  std::vector<Index> target;
};

// |T| ~ U{target_min..target_max} drawn without replacement from the grid,
// then |C| ~ U{context_min..min(context_max, |T|)} drawn from T.
ContextTargetSplit sample_split(Index n_points, Rng& rng, const SplitConfig& config);

ObservationSet select_observations(const TrajectoryRecord& series, std::span<const Index> indices);

struct BatchElement {
  const TrajectoryRecord* series = nullptr;
  ContextTargetSplit split;
};

struct LossTerms {
  Tensor loss;  // batch mean of kl − log-likelihood
  Tensor kl;    // summed over the batch
  Tensor nll;   // summed over the batch
};

LossTerms elbo_loss(const BoundModel& model, std::span<const BatchElement> batch, TrainingMode mode, Rng& rng);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<Matrix> gradients;  // parameter_block_names() order
};

LossAndGradients loss_and_gradients(const ModelParams& params, std::span<const BatchElement> batch, TrainingMode mode,
                                    Rng& rng);

// Per-series mean of elbo_loss over `elements`, evaluated in batches
// without recording gradients.
double mean_loss(const ModelParams& params, std::span<const BatchElement> elements, Index batch_size,
                 TrainingMode mode, Rng& rng);

struct TrainConfig {
  int epochs = 100;
  double validation_fraction = 0.2;
  Index batch_size = 32;
  AdamConfig adam;
  SplitConfig split;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> trace;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Full epoch budget, no early stopping. Throws TrainingError naming the
// epoch and batch if the loss stops being finite.
TrainResult train(ModelParams params, std::span<const TrajectoryRecord> data, const TrainConfig& config,
                  TrainingMode mode, const EpochCallback& on_epoch = {});

void write_trace_csv(std::ostream& os, std::span<const EpochStats> trace);
void write_trace_csv(const std::filesystem::path& path, std::span<const EpochStats> trace);

}  // namespace lupindp
