#pragma once

#include <random>

#include "lupindp/errors.hpp"
#include "lupindp/ops.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

using Rng = std::mt19937_64;

// Diagonal Gaussian over the global latent; one row per series.
template <typename S>
struct BasicLatentDistribution {
  BasicTensor<S> mean;
  BasicTensor<S> scale;
};

using LatentDistribution = BasicLatentDistribution<double>;

template <typename S>
BasicTensor<S> kl_diag_gaussians(const BasicLatentDistribution<S>& q, const BasicLatentDistribution<S>& p) {
  return kl_diag_gaussians(q.mean, q.scale, p.mean, p.scale);
}

// Standard normal noise, drawn row-major from `rng`.
template <typename S>
MatrixX<S> standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<S> normal(S(0), S(1));
  MatrixX<S> eps(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) eps(i, j) = normal(rng);
  return eps;
}

// z = μ + σ ⊙ ε. A zero scale yields μ exactly.
template <typename S>
BasicTensor<S> reparameterized_sample(const BasicLatentDistribution<S>& dist, Rng& rng) {
  detail::require_same_shape(dist.mean, dist.scale, "reparameterized_sample");
  if ((dist.scale.value().array() < S(0)).any()) throw DomainError("reparameterized_sample: negative scale");
  auto& tape = dist.mean.tape();
  const auto eps = tape.constant(standard_normal<S>(dist.mean.rows(), dist.mean.cols(), rng));
  return add(dist.mean, mul(dist.scale, eps));
}

}  // namespace lupindp
