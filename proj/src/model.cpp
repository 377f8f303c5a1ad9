#include "lupindp/model.hpp"

#include <cmath>

#include "lupindp/odeint.hpp"
#include "lupindp/ops.hpp"

namespace lupindp {

void ModelConfig::validate() const {
  if (observation_dim <= 0 || representation_dim <= 0 || privileged_dim <= 0 || privileged_representation_dim <= 0 ||
      latent_dim <= 0 || ode_state_dim <= 0)
    throw ConfigError("model dimensions must be positive");
  if (hidden < 4) throw ConfigError("hidden width must be at least 4");
  if (ode_substeps < 1) throw ConfigError("ode_substeps must be at least 1");
  if (!(scale_floor > 0)) throw ConfigError("scale_floor must be positive");
}

namespace {

void append_names(const std::string& prefix, int layers, std::vector<std::string>& out) {
  for (int i = 0; i < layers; ++i) {
    out.push_back(prefix + "." + std::to_string(i) + ".weight");
    out.push_back(prefix + "." + std::to_string(i) + ".bias");
  }
}

Tensor floored_softplus(const Tensor& raw, double floor) { return shift(softplus(raw), floor); }

void check_times(std::span<const double> times) {
  if (times.empty()) throw ContractError("decode needs at least one target time");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0) throw ContractError("target times must be finite and non-negative");
    if (i > 0 && !(times[i] > times[i - 1])) throw ContractError("target times must be strictly increasing");
  }
}

}  // namespace

const std::vector<std::string>& parameter_block_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    append_names("observation_encoder", 3, out);
    append_names("privileged_encoder", 3, out);
    append_names("fusion_residual", 3, out);
    append_names("latent.trunk", 2, out);
    out.push_back("latent.mean.weight");
    out.push_back("latent.mean.bias");
    out.push_back("latent.scale.weight");
    out.push_back("latent.scale.bias");
    append_names("initial_state", 3, out);
    append_names("ode_field", 3, out);
    append_names("decoder", 3, out);
    return out;
  }();
  return names;
}

bool is_privileged_block(const std::string& name) {
  return name.rfind("privileged_encoder.", 0) == 0 || name.rfind("fusion_residual.", 0) == 0;
}

std::vector<const Matrix*> ModelParams::blocks() const {
  auto mutable_blocks = parameter_blocks(const_cast<Networks<Matrix>&>(networks));
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for (const Matrix* m : blocks()) n += m->size();
  return n;
}

NetworkShapes network_shapes(const ModelConfig& c) {
  const Index h = c.hidden;
  return {
      {1 + c.observation_dim, h, c.representation_dim, Activation::Relu},
      {c.privileged_dim, h, c.privileged_representation_dim, Activation::Relu},
      {c.aggregate_dim() + c.privileged_representation_dim, h, c.aggregate_dim(), Activation::Relu},
      {c.latent_dim, h, c.ode_state_dim, Activation::Relu},
      {c.ode_state_dim + c.latent_dim + 1, h, c.ode_state_dim, Activation::Softplus},
      {c.ode_state_dim + c.latent_dim, h, 2 * c.observation_dim, Activation::Relu},
  };
}

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  const NetworkShapes shapes = network_shapes(config);
  ModelParams p;
  p.config = config;
  Networks<Matrix>& n = p.networks;
  n.observation_encoder = init_mlp(shapes.observation_encoder, rng);
  n.privileged_encoder = init_mlp(shapes.privileged_encoder, rng);
  n.fusion_residual = init_mlp(shapes.fusion_residual, rng);
  n.latent.trunk[0] = init_linear(config.aggregate_dim(), config.hidden, rng);
  n.latent.trunk[1] = init_linear(config.hidden, config.hidden, rng);
  n.latent.mean = init_linear(config.hidden, config.latent_dim, rng);
  n.latent.scale = init_linear(config.hidden, config.latent_dim, rng);
  n.initial_state = init_mlp(shapes.initial_state, rng);
  n.ode_field = init_mlp(shapes.ode_field, rng);
  n.decoder = init_mlp(shapes.decoder, rng);
  return p;
}

Tensor aggregate_observations(const Tensor& reps) {
  if (reps.rows() == 0) throw ContractError("cannot aggregate an empty set of representations");
  return concat_cols({reduce(Reduction::Mean, reps, 0), reduce(Reduction::LogSumExp, reps, 0)});
}

Tensor aggregate_segments(const Tensor& reps, std::span<const Index> offsets) {
  return concat_cols({segment_reduce(Reduction::Mean, reps, offsets), segment_reduce(Reduction::LogSumExp, reps, offsets)});
}

BoundModel::BoundModel(Tape& tape, const ModelParams& params, bool trainable) : tape_(&tape), config_(params.config) {
  config_.validate();
  const Networks<Matrix>& src = params.networks;
  nets_.observation_encoder = bind(tape, src.observation_encoder, trainable);
  nets_.privileged_encoder = bind(tape, src.privileged_encoder, trainable);
  nets_.fusion_residual = bind(tape, src.fusion_residual, trainable);
  for (std::size_t i = 0; i < 2; ++i) nets_.latent.trunk[i] = bind(tape, src.latent.trunk[i], trainable);
  nets_.latent.mean = bind(tape, src.latent.mean, trainable);
  nets_.latent.scale = bind(tape, src.latent.scale, trainable);
  nets_.initial_state = bind(tape, src.initial_state, trainable);
  nets_.ode_field = bind(tape, src.ode_field, trainable);
  nets_.decoder = bind(tape, src.decoder, trainable);
  for (Tensor* t : parameter_blocks(nets_)) blocks_.push_back(*t);
}

Tensor BoundModel::encode_observations(const ObservationSet& obs) const {
  if (obs.size() == 0) throw ContractError("cannot encode an empty observation set");
  if (obs.values.rows() != obs.size() || obs.values.cols() != config_.observation_dim)
    throw DimensionError("observation set shape does not match the model");
  Matrix input(obs.size(), 1 + config_.observation_dim);
  for (Index i = 0; i < obs.size(); ++i) input(i, 0) = obs.times[static_cast<std::size_t>(i)];
  input.rightCols(config_.observation_dim) = obs.values;
  return mlp_forward(nets_.observation_encoder, tape_->constant(std::move(input)));
}

Tensor BoundModel::encode_and_aggregate(std::span<const ObservationSet> sets) const {
  if (sets.empty()) throw ContractError("no observation sets to encode");
  Index total = 0;
  std::vector<Index> offsets{0};
  for (const auto& s : sets) {
    if (s.size() == 0) throw ContractError("cannot encode an empty observation set");
    if (s.values.rows() != s.size() || s.values.cols() != config_.observation_dim)
      throw DimensionError("observation set shape does not match the model");
    total += s.size();
    offsets.push_back(total);
  }
  Matrix input(total, 1 + config_.observation_dim);
  Index row = 0;
  for (const auto& s : sets) {
    for (Index i = 0; i < s.size(); ++i, ++row) {
      input(row, 0) = s.times[static_cast<std::size_t>(i)];
      input.row(row).tail(config_.observation_dim) = s.values.row(i);
    }
  }
  const Tensor reps = mlp_forward(nets_.observation_encoder, tape_->constant(std::move(input)));
  return aggregate_segments(reps, offsets);
}

Tensor BoundModel::encode_privileged(std::span<const double> pi) const {
  if (config_.privileged_dim != 1) throw DimensionError("encode_privileged expects one scalar per series");
  Matrix input(static_cast<Index>(pi.size()), 1);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (!std::isfinite(pi[i])) throw DomainError("privileged information must be finite");
    input(static_cast<Index>(i), 0) = pi[i];
  }
  return mlp_forward(nets_.privileged_encoder, tape_->constant(std::move(input)));
}

Tensor BoundModel::fuse(const Tensor& r_o, FusionMode mode, const Tensor* r_pi) const {
  if (r_o.cols() != config_.aggregate_dim()) throw ContractError("fuse: r_o has the wrong width");
  if (mode == FusionMode::NoPrivileged) return r_o;
  if (!r_pi) throw ContractError("fuse: privileged representation required");
  if (r_pi->rows() != r_o.rows() || r_pi->cols() != config_.privileged_representation_dim)
    throw ContractError("fuse: privileged representation has the wrong shape");
  return add(r_o, mlp_forward(nets_.fusion_residual, concat_cols({r_o, *r_pi})));
}

LatentDistribution BoundModel::latent_params(const Tensor& r) const {
  if (r.cols() != config_.aggregate_dim()) throw DimensionError("latent_params: representation has the wrong width");
  Tensor h = relu(linear_forward(nets_.latent.trunk[0], r));
  h = relu(linear_forward(nets_.latent.trunk[1], h));
  return {linear_forward(nets_.latent.mean, h),
          floored_softplus(linear_forward(nets_.latent.scale, h), config_.scale_floor)};
}

Predictive BoundModel::decode(const Tensor& z, std::span<const double> times) const {
  check_times(times);
  if (z.cols() != config_.latent_dim) throw DimensionError("decode: latent sample has the wrong width");
  const Index batch = z.rows();

  SolveGrid grid;
  grid.substeps = config_.ode_substeps;
  const bool prepend_origin = times.front() > 0.0;
  if (prepend_origin) grid.times.push_back(0.0);
  grid.times.insert(grid.times.end(), times.begin(), times.end());

  Tape& tape = *tape_;
  const Tensor initial = mlp_forward(nets_.initial_state, z);
  auto field = [&](const Tensor& state, double t) {
    const Tensor clock = tape.constant(Matrix::Constant(batch, 1, t));
    return mlp_forward(nets_.ode_field, concat_cols({state, z, clock}));
  };
  const std::vector<Tensor> states = rk4_solve(field, initial, grid);

  Predictive out;
  out.times.assign(times.begin(), times.end());
  const Index d = config_.observation_dim;
  for (std::size_t i = prepend_origin ? 1 : 0; i < states.size(); ++i) {
    const Tensor raw = mlp_forward(nets_.decoder, concat_cols({states[i], z}));
    out.mean.push_back(slice_cols(raw, 0, d));
    out.scale.push_back(floored_softplus(slice_cols(raw, d, d), config_.scale_floor));
  }
  return out;
}

ForwardResult BoundModel::forward(std::span<const ObservationSet> context, std::optional<std::span<const double>> pi,
                                  std::span<const double> times, Rng& rng, bool sample) const {
  const Tensor r_o = encode_and_aggregate(context);
  Tensor r;
  if (pi) {
    if (pi->size() != context.size()) throw ContractError("forward: one privileged value per series required");
    const Tensor r_pi = encode_privileged(*pi);
    r = fuse(r_o, FusionMode::WithPrivileged, &r_pi);
  } else {
    r = fuse(r_o, FusionMode::NoPrivileged, nullptr);
  }
  ForwardResult out;
  out.latent = latent_params(r);
  out.z = sample ? reparameterized_sample(out.latent, rng) : out.latent.mean;
  out.predictive = decode(out.z, times);
  return out;
}

std::vector<Matrix> collect_gradients(const BoundModel& model) {
  std::vector<Matrix> grads;
  grads.reserve(model.bound_blocks().size());
  for (const Tensor& t : model.bound_blocks()) grads.push_back(t.grad());
  return grads;
}

}  // namespace lupindp
