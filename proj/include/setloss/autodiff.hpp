#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records nodes in append order; every node's inputs precede it, so a
// single reverse sweep visits each node once. Values are immutable once
// recorded.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "setloss/matrix.hpp"

namespace setloss::ad {

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScaleShift,
  kRelu,
  kSigmoid,
  kLog,
  kExp,
  kSoftmax,
  kLogSumExp,
  kSum,
  kSumGroups,
  kMin,
  kMax,
  kClip,
  kConcat,
  kSlice,
  kReshape,
  kDropout,
  kBatchNorm,
};

inline constexpr OpKind kAllOpKinds[] = {
    OpKind::kLeaf,     OpKind::kMatmul,    OpKind::kAdd,       OpKind::kSub,   OpKind::kMul,
    OpKind::kScaleShift, OpKind::kRelu,    OpKind::kSigmoid,   OpKind::kLog,   OpKind::kExp,
    OpKind::kSoftmax,  OpKind::kLogSumExp, OpKind::kSum,       OpKind::kSumGroups,
    OpKind::kMin,      OpKind::kMax,       OpKind::kClip,      OpKind::kConcat,
    OpKind::kSlice,    OpKind::kReshape,   OpKind::kDropout,   OpKind::kBatchNorm,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScaleShift: return "scale_shift";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSumExp: return "logsumexp";
    case OpKind::kSum: return "sum";
    case OpKind::kSumGroups: return "sum_groups";
    case OpKind::kMin: return "min";
    case OpKind::kMax: return "max";
    case OpKind::kClip: return "clip";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kDropout: return "dropout";
    case OpKind::kBatchNorm: return "batchnorm";
  }
  return "unknown";
}

inline std::optional<OpKind> op_from_name(std::string_view name) {
  for (OpKind k : kAllOpKinds) {
    if (op_name(k) == name) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Forward kernels, usable without a tape.
namespace kernels {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<RowMajor> view(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

/// op(a) * op(b), where op transposes when requested.
inline Matrix matmul(const Matrix& a, const Matrix& b, bool transpose_a = false,
                     bool transpose_b = false) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + shape_string(a) + " vs " +
                                shape_string(b) + ")");
  }
  Matrix out(m, n);
  if (m == 0 || n == 0 || ka == 0) return out;
  auto c = view(out);
  auto va = view(a);
  auto vb = view(b);
  if (!transpose_a && !transpose_b) c.noalias() = va * vb;
  else if (transpose_a && !transpose_b) c.noalias() = va.transpose() * vb;
  else if (!transpose_a && transpose_b) c.noalias() = va * vb.transpose();
  else c.noalias() = va.transpose() * vb.transpose();
  return out;
}

inline std::size_t reduced_length(const Matrix& m, Axis axis) {
  return axis == Axis::kRow ? m.cols() : m.rows();
}

inline Matrix reduced_shape(const Matrix& m, Axis axis) {
  return axis == Axis::kRow ? Matrix(m.rows(), 1) : Matrix(1, m.cols());
}

// Visits every (output index, element) pair of a reduction along `axis`.
template <typename F>
void for_each_lane(const Matrix& m, Axis axis, F&& f) {
  if (axis == Axis::kRow) {
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) f(i, i * m.cols() + j);
  } else {
    for (std::size_t j = 0; j < m.cols(); ++j)
      for (std::size_t i = 0; i < m.rows(); ++i) f(j, i * m.cols() + j);
  }
}

/// max_j m + log sum_j exp(m - max_j m) along `axis`.
inline Matrix logsumexp(const Matrix& m, Axis axis) {
  if (reduced_length(m, axis) == 0) throw std::invalid_argument("logsumexp: empty reduction");
  Matrix peak = reduced_shape(m, axis);
  for (double& v : peak.values()) v = -std::numeric_limits<double>::infinity();
  for_each_lane(m, axis, [&](std::size_t o, std::size_t k) { peak[o] = std::max(peak[o], m[k]); });
  Matrix acc = reduced_shape(m, axis);
  for_each_lane(m, axis, [&](std::size_t o, std::size_t k) { acc[o] += std::exp(m[k] - peak[o]); });
  for (std::size_t o = 0; o < acc.size(); ++o) acc[o] = peak[o] + std::log(acc[o]);
  return acc;
}

inline Matrix softmax(const Matrix& m, Axis axis) {
  if (reduced_length(m, axis) == 0) throw std::invalid_argument("softmax: empty reduction");
  const Matrix lse = logsumexp(m, axis);
  Matrix out(m.rows(), m.cols());
  for_each_lane(m, axis, [&](std::size_t o, std::size_t k) { out[k] = std::exp(m[k] - lse[o]); });
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernels

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  inline const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Running statistics owned by a batch normalization layer.
struct BatchNormState {
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t width)
      : running_mean(1, width, 0.0), running_var(1, width, 1.0) {}
};

/// Gradients produced by one backward sweep, indexed by node.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Matrix> grads, std::vector<const Matrix*> values)
      : grads_(std::move(grads)), values_(std::move(values)) {}

  /// d root / d v. Nodes the root does not depend on get zeros.
  Matrix of(Var v) const {
    const Matrix& g = grads_.at(v.id());
    if (!g.empty() || values_[v.id()]->empty()) return g;
    return Matrix(values_[v.id()]->rows(), values_[v.id()]->cols());
  }

 private:
  std::vector<Matrix> grads_;
  std::vector<const Matrix*> values_;
};

class Tape {
 public:
  /// Receives d root / d output and accumulates into the gradients of the
  /// inputs; entries are null for inputs that need no gradient.
  using BackwardFn = std::function<void(const Matrix& grad_out, std::span<Matrix* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value) { return push_leaf(std::move(value), true); }
  Var constant(Matrix value) { return push_leaf(std::move(value), false); }

  const Matrix& value(Var v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }

  /// Scales the upstream gradient of every node of `kind` by 1.5 during
  /// backward. Exists only so gradient checks can be shown to catch a broken op.
  void corrupt_backward(OpKind kind) { corrupted_.insert(kind); }

  /// Lowest node id whose value contains a non-finite entry.
  std::optional<std::size_t> first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].value.all_finite()) return i;
    }
    return std::nullopt;
  }

  // ---- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false) {
    Matrix out = kernels::matmul(value(a), value(b), transpose_a, transpose_b);
    const std::size_t ia = a.id(), ib = b.id();
    return push(OpKind::kMatmul, {ia, ib}, std::move(out),
                [this, ia, ib, transpose_a, transpose_b](const Matrix& g,
                                                         std::span<Matrix* const> in) {
                  const Matrix& va = nodes_[ia].value;
                  const Matrix& vb = nodes_[ib].value;
                  // C = op(A) op(B)
                  if (in[0]) {
                    *in[0] += transpose_a ? kernels::matmul(vb, g, transpose_b, true)
                                          : kernels::matmul(g, vb, false, !transpose_b);
                  }
                  if (in[1]) {
                    *in[1] += transpose_b ? kernels::matmul(g, va, true, transpose_a)
                                          : kernels::matmul(va, g, !transpose_a, false);
                  }
                });
  }

  /// a + b where b has a's shape, or is a row (1 x cols), column (rows x 1)
  /// or scalar (1 x 1) broadcast over a.
  Var add(Var a, Var b) { return binary(OpKind::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::kSub, a, b); }
  /// Elementwise product, broadcasting b as in add().
  Var mul(Var a, Var b) { return binary(OpKind::kMul, a, b); }

  /// scale * a + shift with constant scale and shift.
  Var scale_shift(Var a, double scale, double shift = 0.0) {
    Matrix out = value(a);
    for (double& v : out.values()) v = scale * v + shift;
    return push(OpKind::kScaleShift, {a.id()}, std::move(out),
                [scale](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += scale * g[k];
                });
  }

  // ---- elementwise --------------------------------------------------------

  Var relu(Var a) {
    Matrix out = value(a);
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id();
    return push(OpKind::kRelu, {ia}, std::move(out),
                [this, ia](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Matrix& x = nodes_[ia].value;
                  for (std::size_t k = 0; k < g.size(); ++k)
                    if (x[k] > 0.0) (*in[0])[k] += g[k];
                });
  }

  Var sigmoid(Var a) {
    Matrix out = value(a);
    for (double& v : out.values()) v = kernels::sigmoid(v);
    return push_self_referencing(OpKind::kSigmoid, a, std::move(out),
                                 [](const Matrix& y, const Matrix& g, Matrix& dx) {
                                   for (std::size_t k = 0; k < g.size(); ++k)
                                     dx[k] += g[k] * y[k] * (1.0 - y[k]);
                                 });
  }

  Var log(Var a) {
    Matrix out = value(a);
    for (double& v : out.values()) v = std::log(v);
    const std::size_t ia = a.id();
    return push(OpKind::kLog, {ia}, std::move(out),
                [this, ia](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Matrix& x = nodes_[ia].value;
                  for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] / x[k];
                });
  }

  Var exp(Var a) {
    Matrix out = value(a);
    for (double& v : out.values()) v = std::exp(v);
    return push_self_referencing(OpKind::kExp, a, std::move(out),
                                 [](const Matrix& y, const Matrix& g, Matrix& dx) {
                                   for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k] * y[k];
                                 });
  }

  /// Clamps to [lo, hi]. Gradient passes through unclipped entries only.
  Var clip(Var a, double lo, double hi) {
    Matrix out = value(a);
    for (double& v : out.values()) v = std::clamp(v, lo, hi);
    const std::size_t ia = a.id();
    return push(OpKind::kClip, {ia}, std::move(out),
                [this, ia, lo, hi](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Matrix& x = nodes_[ia].value;
                  for (std::size_t k = 0; k < g.size(); ++k)
                    if (x[k] >= lo && x[k] <= hi) (*in[0])[k] += g[k];
                });
  }

  // ---- reductions ---------------------------------------------------------

  Var softmax(Var a, Axis axis) {
    Matrix out = kernels::softmax(value(a), axis);
    const std::size_t self = nodes_.size();
    return push(OpKind::kSoftmax, {a.id()}, std::move(out),
                [this, self, axis](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Matrix& y = nodes_[self].value;
                  Matrix dot = kernels::reduced_shape(y, axis);
                  kernels::for_each_lane(y, axis,
                                         [&](std::size_t o, std::size_t k) { dot[o] += g[k] * y[k]; });
                  kernels::for_each_lane(y, axis, [&](std::size_t o, std::size_t k) {
                    (*in[0])[k] += y[k] * (g[k] - dot[o]);
                  });
                });
  }

  Var logsumexp(Var a, Axis axis) {
    Matrix out = kernels::logsumexp(value(a), axis);
    const std::size_t ia = a.id();
    const std::size_t self = nodes_.size();
    return push(OpKind::kLogSumExp, {ia}, std::move(out),
                [this, ia, self, axis](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Matrix& x = nodes_[ia].value;
                  const Matrix& lse = nodes_[self].value;
                  kernels::for_each_lane(x, axis, [&](std::size_t o, std::size_t k) {
                    (*in[0])[k] += g[o] * std::exp(x[k] - lse[o]);
                  });
                });
  }

  Var sum(Var a, Axis axis) {
    const Matrix& x = value(a);
    Matrix out = kernels::reduced_shape(x, axis);
    kernels::for_each_lane(x, axis, [&](std::size_t o, std::size_t k) { out[o] += x[k]; });
    return push(OpKind::kSum, {a.id()}, std::move(out),
                [this, ia = a.id(), axis](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  kernels::for_each_lane(nodes_[ia].value, axis, [&](std::size_t o, std::size_t k) {
                    (*in[0])[k] += g[o];
                  });
                });
  }

  Var sum_all(Var a) {
    double total = 0.0;
    for (double v : value(a).values()) total += v;
    return push(OpKind::kSum, {a.id()}, Matrix::scalar(total),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (double& v : in[0]->values()) v += g[0];
                });
  }

  /// Sums each run of `group` consecutive rows into one row. Each column is
  /// summed in ascending value order, so the result is bitwise independent
  /// of the row order inside a group.
  Var sum_groups(Var a, std::size_t group) {
    const Matrix& x = value(a);
    if (group == 0 || x.rows() % group != 0) {
      throw std::invalid_argument("sum_groups: " + std::to_string(x.rows()) +
                                  " rows not divisible into groups of " + std::to_string(group));
    }
    const std::size_t n_groups = x.rows() / group;
    Matrix out(n_groups, x.cols());
    std::vector<double> lane(group);
    for (std::size_t s = 0; s < n_groups; ++s) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        for (std::size_t r = 0; r < group; ++r) lane[r] = x(s * group + r, c);
        std::sort(lane.begin(), lane.end());
        double total = 0.0;
        for (double v : lane) total += v;
        out(s, c) = total;
      }
    }
    return push(OpKind::kSumGroups, {a.id()}, std::move(out),
                [group](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  Matrix& dx = *in[0];
                  for (std::size_t r = 0; r < dx.rows(); ++r)
                    for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += g(r / group, c);
                });
  }

  /// Minimum along `axis`; ties resolve to the lowest index, which alone
  /// receives the gradient.
  Var min(Var a, Axis axis) { return extremum(OpKind::kMin, a, axis); }
  Var max(Var a, Axis axis) { return extremum(OpKind::kMax, a, axis); }

  // ---- shape --------------------------------------------------------------

  /// Joins parts. Axis::kRow extends each row (column counts add up);
  /// Axis::kCol stacks parts vertically (row counts add up).
  Var concat(std::span<const Var> parts, Axis axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    std::size_t rows = value(parts[0]).rows(), cols = value(parts[0]).cols();
    std::size_t running = 0;
    for (const Var& p : parts) {
      const Matrix& v = value(p);
      if (axis == Axis::kRow ? v.rows() != rows : v.cols() != cols) {
        throw std::invalid_argument("concat: incompatible shape " + shape_string(v));
      }
      ids.push_back(p.id());
      offsets.push_back(running);
      running += axis == Axis::kRow ? v.cols() : v.rows();
    }
    if (axis == Axis::kRow) cols = running;
    else rows = running;
    Matrix out(rows, cols);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Matrix& v = value(parts[p]);
      for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) {
          if (axis == Axis::kRow) out(r, offsets[p] + c) = v(r, c);
          else out(offsets[p] + r, c) = v(r, c);
        }
    }
    return push(OpKind::kConcat, ids, std::move(out),
                [offsets, axis](const Matrix& g, std::span<Matrix* const> in) {
                  for (std::size_t p = 0; p < in.size(); ++p) {
                    if (!in[p]) continue;
                    Matrix& d = *in[p];
                    for (std::size_t r = 0; r < d.rows(); ++r)
                      for (std::size_t c = 0; c < d.cols(); ++c)
                        d(r, c) += axis == Axis::kRow ? g(r, offsets[p] + c) : g(offsets[p] + r, c);
                  }
                });
  }

  Var slice(Var a, std::size_t row0, std::size_t n_rows, std::size_t col0, std::size_t n_cols) {
    const Matrix& x = value(a);
    if (row0 + n_rows > x.rows() || col0 + n_cols > x.cols()) {
      throw std::out_of_range("slice: window exceeds " + shape_string(x));
    }
    Matrix out(n_rows, n_cols);
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t c = 0; c < n_cols; ++c) out(r, c) = x(row0 + r, col0 + c);
    return push(OpKind::kSlice, {a.id()}, std::move(out),
                [row0, col0](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) (*in[0])(row0 + r, col0 + c) += g(r, c);
                });
  }

  Var slice_rows(Var a, std::size_t row0, std::size_t n_rows) {
    return slice(a, row0, n_rows, 0, value(a).cols());
  }
  Var slice_cols(Var a, std::size_t col0, std::size_t n_cols) {
    return slice(a, 0, value(a).rows(), col0, n_cols);
  }

  Var reshape(Var a, std::size_t rows, std::size_t cols) {
    Matrix out = value(a).reshaped(rows, cols);
    return push(OpKind::kReshape, {a.id()}, std::move(out),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k];
                });
  }

  // ---- regularization -----------------------------------------------------

  /// Inverted dropout: kept entries are scaled by 1 / (1 - rate). Callers
  /// skip this op entirely in evaluation mode.
  Var dropout(Var a, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    const Matrix& x = value(a);
    Matrix mask(x.rows(), x.cols());
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (double& m : mask.values()) m = keep(rng) ? scale : 0.0;
    Matrix out = x;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] *= mask[k];
    return push(OpKind::kDropout, {a.id()}, std::move(out),
                [mask = std::move(mask)](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (std::size_t k = 0; k < g.size(); ++k) (*in[0])[k] += g[k] * mask[k];
                });
  }

  /// Per-column normalization. In training mode uses batch statistics and
  /// folds them into `state`; otherwise uses the running statistics.
  Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, bool training) {
    const Matrix& xv = value(x);
    const std::size_t m = xv.rows(), d = xv.cols();
    if (value(gamma).rows() != 1 || value(gamma).cols() != d || !value(beta).same_shape(value(gamma)) ||
        state.running_mean.cols() != d) {
      throw std::invalid_argument("batchnorm: parameter width does not match input " +
                                  shape_string(xv));
    }
    if (m == 0) throw std::invalid_argument("batchnorm: empty batch");
    Matrix mean(1, d), var(1, d);
    if (training) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += xv(r, c);
      for (double& v : mean.values()) v /= static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          const double z = xv(r, c) - mean[c];
          var[c] += z * z;
        }
      for (double& v : var.values()) v /= static_cast<double>(m);
      for (std::size_t c = 0; c < d; ++c) {
        state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean[c];
        state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var[c];
      }
    } else {
      mean = state.running_mean;
      var = state.running_var;
    }
    Matrix inv_std(1, d);
    for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
    Matrix normalized(m, d);
    Matrix out(m, d);
    const Matrix& gv = value(gamma);
    const Matrix& bv = value(beta);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        normalized(r, c) = (xv(r, c) - mean[c]) * inv_std[c];
        out(r, c) = gv[c] * normalized(r, c) + bv[c];
      }
    const std::size_t ig = gamma.id();
    return push(OpKind::kBatchNorm, {x.id(), gamma.id(), beta.id()}, std::move(out),
                [this, ig, training, inv_std = std::move(inv_std),
                 normalized = std::move(normalized)](const Matrix& g, std::span<Matrix* const> in) {
                  const std::size_t rows = g.rows(), width = g.cols();
                  const Matrix& gam = nodes_[ig].value;
                  if (in[1] || in[2]) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < width; ++c) {
                        if (in[1]) (*in[1])[c] += g(r, c) * normalized(r, c);
                        if (in[2]) (*in[2])[c] += g(r, c);
                      }
                  }
                  if (!in[0]) return;
                  if (!training) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < width; ++c)
                        (*in[0])(r, c) += g(r, c) * gam[c] * inv_std[c];
                    return;
                  }
                  // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                  const double count = static_cast<double>(rows);
                  for (std::size_t c = 0; c < width; ++c) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double dxhat = g(r, c) * gam[c];
                      sum_d += dxhat;
                      sum_dx += dxhat * normalized(r, c);
                    }
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double dxhat = g(r, c) * gam[c];
                      (*in[0])(r, c) +=
                          inv_std[c] / count * (count * dxhat - sum_d - normalized(r, c) * sum_dx);
                    }
                  }
                });
  }

  // ---- backward -----------------------------------------------------------

  /// d root / d node for every node. Gradients accumulate over fan-out.
  Gradients backward(Var root) const {
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw std::invalid_argument("backward: root must be 1x1, got " + shape_string(rv));
    }
    std::vector<Matrix> grads(nodes_.size());
    grads[root.id()] = Matrix::scalar(1.0);
    std::vector<Matrix*> in_ptrs;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (grads[id].empty() || !node.requires_grad || !node.backward) continue;
      in_ptrs.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t src = node.inputs[k];
        if (!nodes_[src].requires_grad) continue;
        if (grads[src].empty()) grads[src] = Matrix(nodes_[src].value.rows(), nodes_[src].value.cols());
        in_ptrs[k] = &grads[src];
      }
      if (corrupted_.contains(node.kind)) {
        Matrix scaled = grads[id];
        for (double& v : scaled.values()) v *= 1.5;
        node.backward(scaled, in_ptrs);
      } else {
        node.backward(grads[id], in_ptrs);
      }
    }
    std::vector<const Matrix*> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) values.push_back(&n.value);
    return Gradients(std::move(grads), std::move(values));
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Matrix value;
    BackwardFn backward;
    bool requires_grad;
  };

  Var push_leaf(Matrix value, bool requires_grad) {
    nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  Var push(OpKind kind, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward) {
    bool needs_grad = false;
    for (std::size_t i : inputs) needs_grad = needs_grad || nodes_[i].requires_grad;
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value),
                          needs_grad ? std::move(backward) : nullptr, needs_grad});
    return Var(this, nodes_.size() - 1);
  }

  // Unary op whose backward needs only its own output.
  template <typename F>
  Var push_self_referencing(OpKind kind, Var a, Matrix out, F local) {
    const std::size_t self = nodes_.size();
    return push(kind, {a.id()}, std::move(out),
                [this, self, local](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) local(nodes_[self].value, g, *in[0]);
                });
  }

  enum class Broadcast { kNone, kRow, kCol, kScalar };

  static Broadcast broadcast_kind(const Matrix& a, const Matrix& b) {
    if (a.same_shape(b)) return Broadcast::kNone;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
    throw std::invalid_argument("cannot broadcast " + shape_string(b) + " onto " + shape_string(a));
  }

  static std::size_t broadcast_index(Broadcast bc, std::size_t r, std::size_t c, std::size_t cols) {
    switch (bc) {
      case Broadcast::kNone: return r * cols + c;
      case Broadcast::kRow: return c;
      case Broadcast::kCol: return r;
      case Broadcast::kScalar: return 0;
    }
    return 0;
  }

  Var binary(OpKind kind, Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    const Broadcast bc = broadcast_kind(va, vb);
    Matrix out(va.rows(), va.cols());
    for (std::size_t r = 0; r < va.rows(); ++r)
      for (std::size_t c = 0; c < va.cols(); ++c) {
        const double x = va(r, c);
        const double y = vb[broadcast_index(bc, r, c, va.cols())];
        out(r, c) = kind == OpKind::kAdd ? x + y : kind == OpKind::kSub ? x - y : x * y;
      }
    const std::size_t ia = a.id(), ib = b.id();
    return push(kind, {ia, ib}, std::move(out),
                [this, kind, bc, ia, ib](const Matrix& g, std::span<Matrix* const> in) {
                  const Matrix& xa = nodes_[ia].value;
                  const Matrix& xb = nodes_[ib].value;
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      const std::size_t k = r * g.cols() + c;
                      const std::size_t kb = broadcast_index(bc, r, c, g.cols());
                      const double gk = g[k];
                      if (kind == OpKind::kMul) {
                        if (in[0]) (*in[0])[k] += gk * xb[kb];
                        if (in[1]) (*in[1])[kb] += gk * xa[k];
                      } else {
                        if (in[0]) (*in[0])[k] += gk;
                        if (in[1]) (*in[1])[kb] += kind == OpKind::kSub ? -gk : gk;
                      }
                    }
                });
  }

  Var extremum(OpKind kind, Var a, Axis axis) {
    const Matrix& x = value(a);
    if (kernels::reduced_length(x, axis) == 0) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": empty reduction");
    }
    Matrix out = kernels::reduced_shape(x, axis);
    std::vector<std::size_t> arg(out.size(), std::numeric_limits<std::size_t>::max());
    const bool is_min = kind == OpKind::kMin;
    // Lanes are visited in increasing index order; strict comparison keeps the
    // lowest index on ties.
    kernels::for_each_lane(x, axis, [&](std::size_t o, std::size_t k) {
      if (arg[o] == std::numeric_limits<std::size_t>::max() || (is_min ? x[k] < out[o] : x[k] > out[o])) {
        out[o] = x[k];
        arg[o] = k;
      }
    });
    return push(kind, {a.id()}, std::move(out),
                [arg = std::move(arg)](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (std::size_t o = 0; o < arg.size(); ++o) (*in[0])[arg[o]] += g[o];
                });
  }

  std::deque<Node> nodes_;
  std::set<OpKind> corrupted_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

inline Var operator+(Var a, Var b) { return a.tape().add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape().sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape().mul(a, b); }
inline Var operator-(Var a) { return a.tape().scale_shift(a, -1.0); }

}  // namespace setloss::ad
