#pragma once

// Fixed-step classical Runge-Kutta integration, generic over the state type.
// States only need `state + state` and `scalar * state`, so the same solver
// runs on Eigen vectors (data generation) and on tape tensors (the latent
// ODE, where gradients flow back through every unrolled step).

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "lupindp/errors.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

// Output times t₀ < t₁ < … < tₙ, each interval split into `substeps`
// uniform RK4 steps.
struct SolveGrid {
  std::vector<double> times;
  int substeps = 1;

  void validate() const {
    if (times.empty()) throw ContractError("solve grid has no time points");
    if (substeps < 1) throw ContractError("solve grid needs at least one substep per interval");
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!std::isfinite(times[i])) throw ContractError("solve grid contains a non-finite time");
      if (i > 0 && !(times[i] > times[i - 1])) throw ContractError("solve grid times must be strictly increasing");
    }
  }

  static SolveGrid uniform(double t0, double t1, std::size_t points, int substeps) {
    SolveGrid grid;
    grid.substeps = substeps;
    grid.times.resize(points);
    for (std::size_t i = 0; i < points; ++i)
      grid.times[i] = points == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(points - 1);
    return grid;
  }
};

namespace detail {

template <typename Derived>
bool state_finite(const Eigen::DenseBase<Derived>& y) {
  return y.allFinite();
}

template <typename S>
bool state_finite(const BasicTensor<S>& y) {
  return y.value().allFinite();
}

}  // namespace detail

// Integrates dy/dt = field(y, t) from grid.times[0]. Returns the state at
// every grid time; result[0] is y0. Conditioning inputs are captured by the
// field callable.
template <typename State, typename Field>
std::vector<State> rk4_solve(Field&& field, const State& y0, const SolveGrid& grid) {
  grid.validate();
  if (!detail::state_finite(y0)) throw IntegrationError("non-finite initial state", grid.times.front());
  std::vector<State> out;
  out.reserve(grid.times.size());
  out.push_back(y0);
  State y = y0;
  for (std::size_t i = 1; i < grid.times.size(); ++i) {
    const double t0 = grid.times[i - 1];
    const double h = (grid.times[i] - t0) / grid.substeps;
    for (int s = 0; s < grid.substeps; ++s) {
      const double t = t0 + h * s;
      try {
        const State k1 = field(y, t);
        const State k2 = field(State(y + (0.5 * h) * k1), t + 0.5 * h);
        const State k3 = field(State(y + (0.5 * h) * k2), t + 0.5 * h);
        const State k4 = field(State(y + h * k3), t + h);
        y = State(y + (h / 6.0) * State(State(k1 + k4) + 2.0 * State(k2 + k3)));
      } catch (const NumericError& e) {
        throw IntegrationError(std::string("non-finite state: ") + e.what(), t);
      }
      if (!detail::state_finite(y)) throw IntegrationError("non-finite state", t + h);
    }
    out.push_back(y);
  }
  return out;
}

template <typename S>
struct SecondOrderTrajectory {
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>> positions;
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>> velocities;
};

// ẍ = accel(x, ẋ, t), reduced to first order on the state x ⧺ ẋ.
template <typename S, typename Accel>
SecondOrderTrajectory<S> rk4_solve_second_order(Accel&& accel, const Eigen::Matrix<S, Eigen::Dynamic, 1>& x0,
                                                const Eigen::Matrix<S, Eigen::Dynamic, 1>& v0, const SolveGrid& grid) {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  if (x0.size() != v0.size()) throw DimensionError("rk4_solve_second_order: position/velocity sizes differ");
  const Index n = x0.size();
  Vec y0(2 * n);
  y0 << x0, v0;
  auto field = [&](const Vec& y, double t) -> Vec {
    Vec dy(2 * n);
    dy.head(n) = y.tail(n);
    dy.tail(n) = accel(Vec(y.head(n)), Vec(y.tail(n)), t);
    return dy;
  };
  const auto states = rk4_solve(field, y0, grid);
  SecondOrderTrajectory<S> traj;
  traj.positions.reserve(states.size());
  traj.velocities.reserve(states.size());
  for (const Vec& y : states) {
    traj.positions.push_back(y.head(n));
    traj.velocities.push_back(y.tail(n));
  }
  return traj;
}

}  // namespace lupindp
