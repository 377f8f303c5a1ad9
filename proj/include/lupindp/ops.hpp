#pragma once

// Differentiable primitives on BasicTensor. Every function records exactly
// one node on the tape of its operands.

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lupindp/errors.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

enum class Reduction { Sum, Mean, LogSumExp };

namespace detail {

inline std::string shape_str(Index r, Index c) { return "[" + std::to_string(r) + "x" + std::to_string(c) + "]"; }

template <typename S>
void require_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.rows(), a.cols()) + " and " +
                         shape_str(b.rows(), b.cols()) + " differ");
}

// log(1 + exp(x)) without overflow.
template <typename S>
S softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions of " + detail::shape_str(a.rows(), a.cols()) + " and " +
                         detail::shape_str(b.rows(), b.cols()) + " disagree");
  const std::size_t ia = a.id(), ib = b.id();
  MatrixX<S> out = a.value() * b.value();
  return a.tape().record(std::move(out), "matmul", {a, b}, [ia, ib](BasicTape<S>& t, const MatrixX<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// x·W + b with b a 1×n row broadcast over the rows of x·W.
template <typename S>
BasicTensor<S> affine(const BasicTensor<S>& x, const BasicTensor<S>& weight, const BasicTensor<S>& bias) {
  if (x.cols() != weight.rows())
    throw DimensionError("affine: input width " + std::to_string(x.cols()) + " does not match weight rows " +
                         std::to_string(weight.rows()));
  if (bias.rows() != 1 || bias.cols() != weight.cols())
    throw DimensionError("affine: bias must be 1x" + std::to_string(weight.cols()));
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  MatrixX<S> out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), "affine", {x, weight, bias},
                         [ix, iw, ib](BasicTape<S>& t, const MatrixX<S>& g) {
                           if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
                           if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
                           if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                         });
}

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), "add", {a, b}, [ia, ib](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename S>
BasicTensor<S> sub(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), "sub", {a, b}, [ia, ib](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

// Elementwise product.
template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  MatrixX<S> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), "mul", {a, b}, [ia, ib](BasicTape<S>& t, const MatrixX<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
BasicTensor<S> negate(const BasicTensor<S>& a) {
  const std::size_t ia = a.id();
  return a.tape().record(-a.value(), "negate", {a},
                         [ia](BasicTape<S>& t, const MatrixX<S>& g) { t.accumulate(ia, -g); });
}

template <typename S>
BasicTensor<S> scale(const BasicTensor<S>& a, S factor) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value() * factor, "scale", {a},
                         [ia, factor](BasicTape<S>& t, const MatrixX<S>& g) { t.accumulate(ia, g * factor); });
}

template <typename S>
BasicTensor<S> shift(const BasicTensor<S>& a, S offset) {
  const std::size_t ia = a.id();
  MatrixX<S> out = a.value().array() + offset;
  return a.tape().record(std::move(out), "shift", {a},
                         [ia](BasicTape<S>& t, const MatrixX<S>& g) { t.accumulate(ia, g); });
}

template <typename S>
BasicTensor<S> relu(const BasicTensor<S>& a) {
  const std::size_t ia = a.id();
  MatrixX<S> out = a.value().cwiseMax(S(0));
  return a.tape().record(std::move(out), "relu", {a}, [ia](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, (t.value(ia).array() > S(0)).select(g, S(0)));
  });
}

template <typename S>
BasicTensor<S> softplus(const BasicTensor<S>& a) {
  const std::size_t ia = a.id();
  MatrixX<S> out = a.value().unaryExpr([](S x) { return detail::softplus(x); });
  return a.tape().record(std::move(out), "softplus", {a}, [ia](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr([](S x) { return detail::sigmoid(x); })));
  });
}

template <typename S>
BasicTensor<S> exp(const BasicTensor<S>& a) {
  const std::size_t ia = a.id();
  MatrixX<S> out = a.value().array().exp().matrix();
  return a.tape().record(std::move(out), "exp", {a}, [ia](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).array().exp().matrix()));
  });
}

template <typename S>
BasicTensor<S> log(const BasicTensor<S>& a) {
  if ((a.value().array() <= S(0)).any()) throw DomainError("log of a non-positive value");
  const std::size_t ia = a.id();
  MatrixX<S> out = a.value().array().log().matrix();
  return a.tape().record(std::move(out), "log", {a}, [ia](BasicTape<S>& t, const MatrixX<S>& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

// Sum of every element, as a 1×1 tensor.
template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& a) {
  const std::size_t ia = a.id();
  MatrixX<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), "sum", {a}, [ia](BasicTape<S>& t, const MatrixX<S>& g) {
    const MatrixX<S>& v = t.value(ia);
    t.accumulate(ia, MatrixX<S>::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

// Reduction along `axis`: 0 collapses rows (result 1×cols), 1 collapses
// columns (result rows×1). logsumexp subtracts the running max.
template <typename S>
BasicTensor<S> reduce(Reduction kind, const BasicTensor<S>& x, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("reduce: axis must be 0 or 1");
  const MatrixX<S>& v = x.value();
  // Work on the axis-0 layout; transpose in and out for axis 1.
  const MatrixX<S> work = axis == 0 ? v : MatrixX<S>(v.transpose());
  const Index n = work.rows();
  if (n == 0) throw DomainError("reduce over an empty axis");
  MatrixX<S> out(1, work.cols());
  MatrixX<S> weights;  // d(out)/d(work), per element
  switch (kind) {
    case Reduction::Sum:
      out = work.colwise().sum();
      weights = MatrixX<S>::Ones(n, work.cols());
      break;
    case Reduction::Mean:
      out = work.colwise().sum() / static_cast<S>(n);
      weights = MatrixX<S>::Constant(n, work.cols(), S(1) / static_cast<S>(n));
      break;
    case Reduction::LogSumExp: {
      const auto peak = work.colwise().maxCoeff();
      MatrixX<S> shifted = work.rowwise() - peak;
      MatrixX<S> e = shifted.array().exp().matrix();
      const auto total = e.colwise().sum();
      out = (total.array().log() + peak.array()).matrix();
      weights = e.array().rowwise() / total.array();
      break;
    }
  }
  if (axis == 1) out.transposeInPlace();
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), "reduce", {x},
                         [ix, axis, w = std::move(weights)](BasicTape<S>& t, const MatrixX<S>& g) {
                           if (axis == 0) {
                             t.accumulate(ix, w.array().rowwise() * g.row(0).array());
                           } else {
                             MatrixX<S> gt = (w.array().rowwise() * g.col(0).transpose().array()).matrix();
                             t.accumulate(ix, gt.transpose());
                           }
                         });
}

// Reduces contiguous row blocks: rows [offsets[s], offsets[s+1]) form
// segment s. Output has one row per segment.
template <typename S>
BasicTensor<S> segment_reduce(Reduction kind, const BasicTensor<S>& x, std::span<const Index> offsets) {
  if (offsets.size() < 2) throw ContractError("segment_reduce needs at least one segment");
  if (offsets.front() != 0 || offsets.back() != x.rows())
    throw DimensionError("segment_reduce: offsets must span all rows");
  const MatrixX<S>& v = x.value();
  const Index segments = static_cast<Index>(offsets.size()) - 1;
  MatrixX<S> out(segments, v.cols());
  MatrixX<S> weights(v.rows(), v.cols());
  for (Index s = 0; s < segments; ++s) {
    const Index begin = offsets[s], n = offsets[s + 1] - begin;
    if (n <= 0) throw DomainError("segment_reduce over an empty segment");
    const auto block = v.middleRows(begin, n);
    auto wblock = weights.middleRows(begin, n);
    switch (kind) {
      case Reduction::Sum:
        out.row(s) = block.colwise().sum();
        wblock.setOnes();
        break;
      case Reduction::Mean:
        out.row(s) = block.colwise().sum() / static_cast<S>(n);
        wblock.setConstant(S(1) / static_cast<S>(n));
        break;
      case Reduction::LogSumExp: {
        const Eigen::Matrix<S, 1, Eigen::Dynamic> peak = block.colwise().maxCoeff();
        MatrixX<S> e = (block.rowwise() - peak).array().exp().matrix();
        const Eigen::Matrix<S, 1, Eigen::Dynamic> total = e.colwise().sum();
        out.row(s) = (total.array().log() + peak.array()).matrix();
        wblock = e.array().rowwise() / total.array();
        break;
      }
    }
  }
  std::vector<Index> bounds(offsets.begin(), offsets.end());
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), "segment_reduce", {x},
      [ix, w = std::move(weights), bounds = std::move(bounds)](BasicTape<S>& t, const MatrixX<S>& g) {
        MatrixX<S> gx(w.rows(), w.cols());
        for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
          const Index begin = bounds[s], n = bounds[s + 1] - begin;
          gx.middleRows(begin, n) = w.middleRows(begin, n).array().rowwise() * g.row(static_cast<Index>(s)).array();
        }
        t.accumulate(ix, gx);
      });
}

template <typename S>
BasicTensor<S> concat_cols(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  MatrixX<S> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;  // (id, width)
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    at += p.cols();
  }
  return parts.front().tape().record_range(std::move(out), "concat_cols", parts,
                                           [layout = std::move(layout)](BasicTape<S>& t, const MatrixX<S>& g) {
                                             Index at = 0;
                                             for (const auto& [id, width] : layout) {
                                               t.accumulate(id, g.middleCols(at, width));
                                               at += width;
                                             }
                                           });
}

template <typename S>
BasicTensor<S> concat_cols(std::initializer_list<BasicTensor<S>> parts) {
  return concat_cols(std::span<const BasicTensor<S>>(parts.begin(), parts.size()));
}

template <typename S>
BasicTensor<S> concat_rows(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  MatrixX<S> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;  // (id, height)
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), p.rows());
    at += p.rows();
  }
  return parts.front().tape().record_range(std::move(out), "concat_rows", parts,
                                           [layout = std::move(layout)](BasicTape<S>& t, const MatrixX<S>& g) {
                                             Index at = 0;
                                             for (const auto& [id, height] : layout) {
                                               t.accumulate(id, g.middleRows(at, height));
                                               at += height;
                                             }
                                           });
}

template <typename S>
BasicTensor<S> slice_cols(const BasicTensor<S>& x, Index start, Index count) {
  if (start < 0 || count <= 0 || start + count > x.cols()) throw DimensionError("slice_cols: range out of bounds");
  const std::size_t ix = x.id();
  const Index rows = x.rows(), cols = x.cols();
  MatrixX<S> out = x.value().middleCols(start, count);
  return x.tape().record(std::move(out), "slice_cols", {x},
                         [ix, rows, cols, start, count](BasicTape<S>& t, const MatrixX<S>& g) {
                           MatrixX<S> gx = MatrixX<S>::Zero(rows, cols);
                           gx.middleCols(start, count) = g;
                           t.accumulate(ix, gx);
                         });
}

// Σ log N(y; mu, sigma²) over all elements, optionally weighted by a
// constant mask of the same shape (weight 0 drops an element).
template <typename S>
BasicTensor<S> gaussian_log_pdf(const BasicTensor<S>& y, const BasicTensor<S>& mu, const BasicTensor<S>& sigma,
                                const MatrixX<S>* weights = nullptr) {
  detail::require_same_shape(y, mu, "gaussian_log_pdf");
  detail::require_same_shape(y, sigma, "gaussian_log_pdf");
  if ((sigma.value().array() <= S(0)).any()) throw DomainError("gaussian_log_pdf: non-positive sigma");
  MatrixX<S> w = weights ? *weights : MatrixX<S>::Ones(y.rows(), y.cols());
  if (w.rows() != y.rows() || w.cols() != y.cols()) throw DimensionError("gaussian_log_pdf: weight shape");
  const S half_log_2pi = S(0.5) * std::log(S(2) * S(M_PI));
  const auto resid = (y.value() - mu.value()).array();
  const auto sig = sigma.value().array();
  const auto z = resid / sig;
  MatrixX<S> out(1, 1);
  out(0, 0) = (w.array() * (S(-0.5) * z.square() - sig.log() - half_log_2pi)).sum();
  const std::size_t iy = y.id(), im = mu.id(), is = sigma.id();
  return y.tape().record(std::move(out), "gaussian_log_pdf", {y, mu, sigma},
                         [iy, im, is, w = std::move(w)](BasicTape<S>& t, const MatrixX<S>& g) {
                           const auto r = (t.value(iy) - t.value(im)).array();
                           const auto s = t.value(is).array();
                           const auto wg = w.array() * g(0, 0);
                           const MatrixX<S> dmu = (wg * r / s.square()).matrix();
                           t.accumulate(im, dmu);
                           t.accumulate(iy, -dmu);
                           t.accumulate(is, (wg * (r.square() / s.cube() - S(1) / s)).matrix());
                         });
}

// Σ_d KL(N(qμ, qσ²) ‖ N(pμ, pσ²)) over all elements.
template <typename S>
BasicTensor<S> kl_diag_gaussians(const BasicTensor<S>& q_mean, const BasicTensor<S>& q_scale,
                                 const BasicTensor<S>& p_mean, const BasicTensor<S>& p_scale) {
  detail::require_same_shape(q_mean, q_scale, "kl_diag_gaussians");
  detail::require_same_shape(q_mean, p_mean, "kl_diag_gaussians");
  detail::require_same_shape(q_mean, p_scale, "kl_diag_gaussians");
  if ((q_scale.value().array() <= S(0)).any() || (p_scale.value().array() <= S(0)).any())
    throw DomainError("kl_diag_gaussians: non-positive scale");
  const auto sq = q_scale.value().array();
  const auto sp = p_scale.value().array();
  const auto d = (q_mean.value() - p_mean.value()).array();
  MatrixX<S> out(1, 1);
  out(0, 0) = ((sp / sq).log() + (sq.square() + d.square()) / (S(2) * sp.square()) - S(0.5)).sum();
  const std::size_t iqm = q_mean.id(), iqs = q_scale.id(), ipm = p_mean.id(), ips = p_scale.id();
  return q_mean.tape().record(
      std::move(out), "kl_diag_gaussians", {q_mean, q_scale, p_mean, p_scale},
      [iqm, iqs, ipm, ips](BasicTape<S>& t, const MatrixX<S>& g) {
        const S up = g(0, 0);
        const auto sq = t.value(iqs).array();
        const auto sp = t.value(ips).array();
        const auto d = (t.value(iqm) - t.value(ipm)).array();
        const MatrixX<S> dmean = (up * d / sp.square()).matrix();
        t.accumulate(iqm, dmean);
        t.accumulate(ipm, -dmean);
        t.accumulate(iqs, (up * (sq / sp.square() - S(1) / sq)).matrix());
        t.accumulate(ips, (up * (S(1) / sp - (sq.square() + d.square()) / sp.cube())).matrix());
      });
}

template <typename S>
BasicTensor<S> operator+(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return add(a, b);
}
template <typename S>
BasicTensor<S> operator-(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return sub(a, b);
}
template <typename S>
BasicTensor<S> operator-(const BasicTensor<S>& a) {
  return negate(a);
}
template <typename S>
BasicTensor<S> operator*(S factor, const BasicTensor<S>& a) {
  return scale(a, factor);
}
template <typename S>
BasicTensor<S> operator*(const BasicTensor<S>& a, S factor) {
  return scale(a, factor);
}

}  // namespace lupindp
