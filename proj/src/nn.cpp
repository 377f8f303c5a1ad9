#include "lupindp/nn.hpp"

#include <cmath>
#include <random>

namespace lupindp {

Linear<Matrix> init_linear(Index fan_in, Index fan_out, Rng& rng) {
  if (fan_in <= 0 || fan_out <= 0) throw ConfigError("linear layer widths must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Linear<Matrix> layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
  for (Index i = 0; i < fan_in; ++i)
    for (Index j = 0; j < fan_out; ++j) layer.weight(i, j) = uniform(rng);
  for (Index j = 0; j < fan_out; ++j) layer.bias(0, j) = uniform(rng);
  return layer;
}

Mlp<Matrix> init_mlp(const MlpShape& shape, Rng& rng) {
  if (shape.input <= 0 || shape.hidden <= 0 || shape.output <= 0)
    throw ConfigError("MLP widths must be positive");
  Mlp<Matrix> net;
  net.hidden_activation = shape.hidden_activation;
  net.layers[0] = init_linear(shape.input, shape.hidden, rng);
  net.layers[1] = init_linear(shape.hidden, shape.hidden, rng);
  net.layers[2] = init_linear(shape.hidden, shape.output, rng);
  return net;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ContractError("adam_step: parameter and gradient counts differ");
  if (state.step == 0 && state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i];
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() || state.first_moment[i].rows() != p.rows() ||
        state.first_moment[i].cols() != p.cols())
      throw ContractError("adam_step: shape mismatch in block " + std::to_string(i));
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = c.learning_rate / correction1;
  const double sqrt_correction2 = std::sqrt(correction2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = grads[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const Matrix denom = (v.array().sqrt() / sqrt_correction2 + c.epsilon).matrix();
    *params[i] -= step_size * m.cwiseQuotient(denom);
  }
}

}  // namespace lupindp
