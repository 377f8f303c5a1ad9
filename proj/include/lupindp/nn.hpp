#pragma once

// Three-layer perceptrons, their initialization, and Adam.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lupindp/distributions.hpp"
#include "lupindp/ops.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

enum class Activation { Relu, Softplus };

// `T` is Matrix for stored parameters and Tensor once bound to a tape.
template <typename T>
struct Linear {
  T weight;  // fan_in × fan_out
  T bias;    // 1 × fan_out
};

// layer → activation → layer → activation → layer; no output activation.
template <typename T>
struct Mlp {
  std::array<Linear<T>, 3> layers;
  Activation hidden_activation = Activation::Relu;
};

struct MlpShape {
  Index input = 0;
  Index hidden = 16;
  Index output = 0;
  Activation hidden_activation = Activation::Relu;

  Index parameter_count() const { return input * hidden + hidden + hidden * hidden + hidden + hidden * output + output; }
};

// Weights and biases ~ U(-1/√fan_in, 1/√fan_in).
Linear<Matrix> init_linear(Index fan_in, Index fan_out, Rng& rng);
Mlp<Matrix> init_mlp(const MlpShape& shape, Rng& rng);

template <typename T>
void append_blocks(Linear<T>& layer, std::vector<T*>& out) {
  out.push_back(&layer.weight);
  out.push_back(&layer.bias);
}

template <typename T>
void append_blocks(Mlp<T>& net, std::vector<T*>& out) {
  for (auto& layer : net.layers) append_blocks(layer, out);
}

// Registers stored parameters on `tape`, as variables when `trainable`.
inline Linear<Tensor> bind(Tape& tape, const Linear<Matrix>& layer, bool trainable) {
  if (trainable) return {tape.variable(layer.weight), tape.variable(layer.bias)};
  return {tape.constant(layer.weight), tape.constant(layer.bias)};
}

inline Mlp<Tensor> bind(Tape& tape, const Mlp<Matrix>& net, bool trainable) {
  Mlp<Tensor> bound;
  bound.hidden_activation = net.hidden_activation;
  for (std::size_t i = 0; i < net.layers.size(); ++i) bound.layers[i] = bind(tape, net.layers[i], trainable);
  return bound;
}

template <typename S>
BasicTensor<S> activate(Activation kind, const BasicTensor<S>& x) {
  return kind == Activation::Relu ? relu(x) : softplus(x);
}

template <typename S>
BasicTensor<S> linear_forward(const Linear<BasicTensor<S>>& layer, const BasicTensor<S>& x) {
  return affine(x, layer.weight, layer.bias);
}

// x: rows are independent inputs.
template <typename S>
BasicTensor<S> mlp_forward(const Mlp<BasicTensor<S>>& net, const BasicTensor<S>& x) {
  if (x.cols() != net.layers[0].weight.rows())
    throw DimensionError("mlp_forward: input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(net.layers[0].weight.rows()));
  auto h = activate(net.hidden_activation, linear_forward(net.layers[0], x));
  h = activate(net.hidden_activation, linear_forward(net.layers[1], h));
  return linear_forward(net.layers[2], h);
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over a list of parameter blocks. Moments
// are allocated on the first call and must keep matching shapes afterwards.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state);

}  // namespace lupindp
