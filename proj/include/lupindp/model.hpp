#pragma once

// Neural ODE process with an optional privileged-information branch.
//
// Training mode:  r = r_o + g′(r_o ⧺ f_π(π))
// Test mode:      r = r_o
// Both feed the shared-trunk heads (μ, σ) of the global latent z, which
// seeds and conditions a latent ODE decoded back to observation space.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lupindp/distributions.hpp"
#include "lupindp/nn.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

struct ModelConfig {
  Index observation_dim = 2;
  Index representation_dim = 8;  // per observation; r_o is twice this
  Index privileged_dim = 1;
  Index privileged_representation_dim = 8;
  Index latent_dim = 8;
  Index ode_state_dim = 8;
  Index hidden = 16;
  int ode_substeps = 4;       // RK4 steps per output interval
  double scale_floor = 0.01;  // σ = floor + softplus(raw)

  Index aggregate_dim() const { return 2 * representation_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// μ and σ share the first two layers.
template <typename T>
struct LatentHeads {
  std::array<Linear<T>, 2> trunk;
  Linear<T> mean;
  Linear<T> scale;
};

template <typename T>
struct Networks {
  Mlp<T> observation_encoder;  // (t, y) → r_i
  Mlp<T> privileged_encoder;   // π → r_π
  Mlp<T> fusion_residual;      // r_o ⧺ r_π → correction to r_o
  LatentHeads<T> latent;       // r → (μ, raw σ)
  Mlp<T> initial_state;        // z → L(0)
  Mlp<T> ode_field;            // (L, z, t) → dL/dt
  Mlp<T> decoder;              // (L, z) → (ŷ, raw σ_y)
};

// Fixed block order shared by checkpoints, optimizer state and gradients.
template <typename T>
std::vector<T*> parameter_blocks(Networks<T>& nets) {
  std::vector<T*> out;
  append_blocks(nets.observation_encoder, out);
  append_blocks(nets.privileged_encoder, out);
  append_blocks(nets.fusion_residual, out);
  for (auto& layer : nets.latent.trunk) append_blocks(layer, out);
  append_blocks(nets.latent.mean, out);
  append_blocks(nets.latent.scale, out);
  append_blocks(nets.initial_state, out);
  append_blocks(nets.ode_field, out);
  append_blocks(nets.decoder, out);
  return out;
}

const std::vector<std::string>& parameter_block_names();
// True for blocks of f_π and g′, the privileged-only path.
bool is_privileged_block(const std::string& name);

struct ModelParams {
  ModelConfig config;
  Networks<Matrix> networks;

  std::vector<Matrix*> blocks() { return parameter_blocks(networks); }
  std::vector<const Matrix*> blocks() const;
  Index parameter_count() const;
};

struct NetworkShapes {
  MlpShape observation_encoder, privileged_encoder, fusion_residual, initial_state, ode_field, decoder;
};
NetworkShapes network_shapes(const ModelConfig& config);

ModelParams init_model(const ModelConfig& config, Rng& rng);

// Observations of one series; values has one row per time.
struct ObservationSet {
  std::vector<double> times;
  Matrix values;

  Index size() const { return static_cast<Index>(times.size()); }
};

enum class FusionMode { WithPrivileged, NoPrivileged };

// Per-time predictive Gaussians; each entry is (series × observation dim).
struct Predictive {
  std::vector<double> times;
  std::vector<Tensor> mean;
  std::vector<Tensor> scale;
};

struct ForwardResult {
  LatentDistribution latent;
  Tensor z;
  Predictive predictive;
};

// Mean over the set axis concatenated with logsumexp over it.
Tensor aggregate_observations(const Tensor& reps);
// Same, per contiguous row segment; one output row per segment.
Tensor aggregate_segments(const Tensor& reps, std::span<const Index> offsets);

// Model parameters registered on one tape. All batched methods take one row
// (or one ObservationSet) per series.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, bool trainable);

  Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return config_; }
  const Networks<Tensor>& networks() const { return nets_; }
  // Bound tensors in parameter_block_names() order.
  const std::vector<Tensor>& bound_blocks() const { return blocks_; }

  Tensor encode_observations(const ObservationSet& obs) const;
  // Encodes every set in one pass and aggregates each: series × aggregate dim.
  Tensor encode_and_aggregate(std::span<const ObservationSet> sets) const;
  Tensor encode_privileged(std::span<const double> pi) const;
  Tensor fuse(const Tensor& r_o, FusionMode mode, const Tensor* r_pi) const;
  LatentDistribution latent_params(const Tensor& r) const;
  // Integrates the latent ODE from t = 0 and decodes at every requested
  // time (strictly increasing, non-negative).
  Predictive decode(const Tensor& z, std::span<const double> times) const;

  // Context → latent → predictions. With no π this is the plain neural ODE
  // process path. When `sample` is false z is the latent mean.
  ForwardResult forward(std::span<const ObservationSet> context, std::optional<std::span<const double>> pi,
                        std::span<const double> times, Rng& rng, bool sample = true) const;

 private:
  Tape* tape_;
  ModelConfig config_;
  Networks<Tensor> nets_;
  std::vector<Tensor> blocks_;
};

// Gradients of the bound blocks after backward, in block order.
std::vector<Matrix> collect_gradients(const BoundModel& model);

}  // namespace lupindp
