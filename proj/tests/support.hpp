#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lupindp/tensor.hpp"

namespace lupindp::testing {

// Builds a scalar loss from leaves registered on a fresh tape.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheck {
  double max_rel_error = 0.0;  // over inputs, ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  std::vector<Matrix> analytic;
  std::vector<Matrix> numeric;
};

inline double evaluate(const ScalarFn& f, const std::vector<Matrix>& inputs) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.constant(m));
  return f(tape, leaves).item();
}

inline double relative_error(const Matrix& a, const Matrix& n) {
  const double scale = std::max(a.norm(), n.norm());
  if (scale < 1e-12) return (a - n).norm();
  return (a - n).norm() / scale;
}

// Central differences at step eps on every input entry.
inline GradCheck check_gradients(const ScalarFn& f, std::vector<Matrix> inputs, double eps = 1e-5) {
  GradCheck out;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.variable(m));
    tape.backward(f(tape, leaves));
    for (const auto& l : leaves) out.analytic.push_back(l.grad());
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix g(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + eps;
      const double up = evaluate(f, inputs);
      inputs[k].data()[i] = saved - eps;
      const double down = evaluate(f, inputs);
      inputs[k].data()[i] = saved;
      g.data()[i] = (up - down) / (2 * eps);
    }
    out.numeric.push_back(g);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(out.analytic[k], g));
  }
  return out;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lupindp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lupindp::testing
