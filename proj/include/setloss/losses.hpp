#pragma once

// Set losses over N x F matrices of Bernoulli probabilities.
//
// Every loss is built on the pairwise cost matrix costs[i][j] = H(x_i, y_j),
// where X is the target set and Y the prediction:
//   set cross entropy   -sum_i logsumexp_j(-costs[i][j])
//   set average         sum_i min_j costs[i][j]        (divided by N for kMean)
//   directed Hausdorff  max_i min_j costs[i][j]
//   flattened CE        sum_i H(x_i, y_i)               (index aligned)
//
// Each loss exists twice: a direct evaluation over Matrix values, and a
// differentiable form recorded on an ad::Tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "setloss/autodiff.hpp"
#include "setloss/matrix.hpp"

namespace setloss {

inline constexpr double kDefaultEpsilon = 1e-7;

/// N elements of F features, every entry in [0, 1].
class ObjectSet {
 public:
  ObjectSet() = default;

  explicit ObjectSet(Matrix values) : values_(std::move(values)) {
    for (double v : values_.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("ObjectSet: entry " + std::to_string(v) + " outside [0, 1]");
      }
    }
  }

  ObjectSet(std::initializer_list<std::initializer_list<double>> rows) : ObjectSet(Matrix(rows)) {}

  std::size_t n_elements() const noexcept { return values_.rows(); }
  std::size_t n_features() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }
  std::span<const double> element(std::size_t i) const { return values_.row(i); }

  friend bool operator==(const ObjectSet&, const ObjectSet&) = default;

 private:
  Matrix values_;
};

enum class LossKind { kSetCrossEntropy, kSetAverage, kHausdorff, kFlattenedCrossEntropy };
enum class Reduction { kSum, kMean };

/// Loss selector. `reduce` only affects kSetAverage.
struct LossSpec {
  LossKind kind = LossKind::kSetCrossEntropy;
  Reduction reduce = Reduction::kMean;

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

/// Short names used on the command line and in reports: ce, sce, avg, hausdorff.
inline std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::kFlattenedCrossEntropy: return "ce";
    case LossKind::kSetCrossEntropy: return "sce";
    case LossKind::kSetAverage: return "avg";
    case LossKind::kHausdorff: return "hausdorff";
  }
  return "unknown";
}

inline std::optional<LossKind> parse_loss(std::string_view name) {
  for (LossKind k : {LossKind::kFlattenedCrossEntropy, LossKind::kSetCrossEntropy,
                     LossKind::kSetAverage, LossKind::kHausdorff}) {
    if (loss_name(k) == name) return k;
  }
  return std::nullopt;
}

/// Table row labels (a)-(d) in grid reports.
inline std::string_view loss_row_label(LossKind k) {
  switch (k) {
    case LossKind::kFlattenedCrossEntropy: return "(a) H";
    case LossKind::kSetCrossEntropy: return "(b) SH";
    case LossKind::kSetAverage: return "(c) A1H";
    case LossKind::kHausdorff: return "(d) Haus1H";
  }
  return "?";
}

enum class ElementDistance { kCrossEntropy, kSquaredError };

struct PairwiseCost {
  Matrix costs;
  double epsilon = kDefaultEpsilon;
};

namespace losses {

namespace detail {

inline void require_same_shape(const Matrix& x, const Matrix& y, std::string_view what) {
  if (!x.same_shape(y)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(x) + " vs " +
                                shape_string(y));
  }
}

inline double clip(double v, double eps) { return std::clamp(v, eps, 1.0 - eps); }

}  // namespace detail

/// H(x, y) = sum_f -x_f log(y_f) - (1 - x_f) log(1 - y_f), y clipped to [eps, 1 - eps].
inline double elementwise_cross_entropy(std::span<const double> x, std::span<const double> y,
                                        double epsilon = kDefaultEpsilon) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("elementwise_cross_entropy: dimension mismatch " +
                                std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  double h = 0.0;
  for (std::size_t f = 0; f < x.size(); ++f) {
    const double yc = detail::clip(y[f], epsilon);
    h -= x[f] * std::log(yc) + (1.0 - x[f]) * std::log(1.0 - yc);
  }
  return h;
}

inline double squared_error(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("squared_error: dimension mismatch");
  double d = 0.0;
  for (std::size_t f = 0; f < x.size(); ++f) d += (x[f] - y[f]) * (x[f] - y[f]);
  return d;
}

inline PairwiseCost pairwise_cost_matrix(const ObjectSet& x, const ObjectSet& y,
                                         double epsilon = kDefaultEpsilon,
                                         ElementDistance distance = ElementDistance::kCrossEntropy) {
  detail::require_same_shape(x.values(), y.values(), "pairwise_cost_matrix");
  const std::size_t n = x.n_elements();
  PairwiseCost out{Matrix(n, n), epsilon};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      out.costs(i, j) = distance == ElementDistance::kCrossEntropy
                            ? elementwise_cross_entropy(x.element(i), y.element(j), epsilon)
                            : squared_error(x.element(i), y.element(j));
    }
  return out;
}

inline double set_cross_entropy(const ObjectSet& x, const ObjectSet& y, double epsilon = kDefaultEpsilon) {
  Matrix neg = pairwise_cost_matrix(x, y, epsilon).costs;
  for (double& v : neg.values()) v = -v;
  const Matrix lse = ad::kernels::logsumexp(neg, Axis::kRow);
  double total = 0.0;
  for (double v : lse.values()) total -= v;
  return total;
}

inline double set_average_distance(const ObjectSet& x, const ObjectSet& y, double epsilon = kDefaultEpsilon,
                                   Reduction reduce = Reduction::kMean,
                                   ElementDistance distance = ElementDistance::kCrossEntropy) {
  const Matrix costs = pairwise_cost_matrix(x, y, epsilon, distance).costs;
  double total = 0.0;
  for (std::size_t i = 0; i < costs.rows(); ++i) {
    const auto r = costs.row(i);
    total += *std::min_element(r.begin(), r.end());
  }
  if (reduce == Reduction::kMean && costs.rows() > 0) total /= static_cast<double>(costs.rows());
  return total;
}

inline double hausdorff_distance(const ObjectSet& x, const ObjectSet& y, double epsilon = kDefaultEpsilon,
                                 ElementDistance distance = ElementDistance::kCrossEntropy) {
  const Matrix costs = pairwise_cost_matrix(x, y, epsilon, distance).costs;
  double worst = 0.0;
  for (std::size_t i = 0; i < costs.rows(); ++i) {
    const auto r = costs.row(i);
    worst = std::max(worst, *std::min_element(r.begin(), r.end()));
  }
  return worst;
}

inline double flattened_cross_entropy(const ObjectSet& x, const ObjectSet& y,
                                      double epsilon = kDefaultEpsilon) {
  detail::require_same_shape(x.values(), y.values(), "flattened_cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < x.n_elements(); ++i)
    total += elementwise_cross_entropy(x.element(i), y.element(i), epsilon);
  return total;
}

inline double loss(const LossSpec& spec, const ObjectSet& x, const ObjectSet& y,
                   double epsilon = kDefaultEpsilon) {
  switch (spec.kind) {
    case LossKind::kSetCrossEntropy: return set_cross_entropy(x, y, epsilon);
    case LossKind::kSetAverage: return set_average_distance(x, y, epsilon, spec.reduce);
    case LossKind::kHausdorff: return hausdorff_distance(x, y, epsilon);
    case LossKind::kFlattenedCrossEntropy: return flattened_cross_entropy(x, y, epsilon);
  }
  throw std::logic_error("unhandled LossKind");
}

// ---------------------------------------------------------------------------
// Differentiable forms.

/// Log-probability terms of a prediction, shared by every loss on the same Y.
struct LogTerms {
  ad::Var log_y;      // log(clip(y))
  ad::Var log_not_y;  // log(1 - clip(y))
};

inline LogTerms log_terms(ad::Tape& tape, ad::Var y, double epsilon) {
  ad::Var yc = tape.clip(y, epsilon, 1.0 - epsilon);
  return {tape.log(yc), tape.log(tape.scale_shift(yc, -1.0, 1.0))};
}

/// costs = -(x log(y)^T + (1 - x) log(1 - y)^T), an N x N node.
inline ad::Var pairwise_cost(ad::Tape& tape, ad::Var x, const LogTerms& y_terms) {
  detail::require_same_shape(x.value(), y_terms.log_y.value(), "pairwise_cost");
  ad::Var hit = tape.matmul(x, y_terms.log_y, false, true);
  ad::Var miss = tape.matmul(tape.scale_shift(x, -1.0, 1.0), y_terms.log_not_y, false, true);
  return tape.scale_shift(tape.add(hit, miss), -1.0);
}

inline ad::Var pairwise_cost(ad::Tape& tape, ad::Var x, ad::Var y, double epsilon = kDefaultEpsilon,
                             ElementDistance distance = ElementDistance::kCrossEntropy) {
  if (distance == ElementDistance::kCrossEntropy) return pairwise_cost(tape, x, log_terms(tape, y, epsilon));
  detail::require_same_shape(x.value(), y.value(), "pairwise_cost");
  // |x_i|^2 - 2 x_i.y_j + |y_j|^2
  const std::size_t n = x.value().rows();
  ad::Var xx = tape.sum(tape.mul(x, x), Axis::kRow);                           // n x 1
  ad::Var yy = tape.reshape(tape.sum(tape.mul(y, y), Axis::kRow), 1, n);       // 1 x n
  ad::Var cross = tape.scale_shift(tape.matmul(x, y, false, true), -2.0);      // n x n
  return tape.add(tape.add(cross, xx), yy);
}

inline ad::Var reduce_costs(ad::Tape& tape, const LossSpec& spec, ad::Var costs) {
  switch (spec.kind) {
    case LossKind::kSetCrossEntropy:
      return tape.scale_shift(tape.sum_all(tape.logsumexp(tape.scale_shift(costs, -1.0), Axis::kRow)), -1.0);
    case LossKind::kSetAverage: {
      ad::Var total = tape.sum_all(tape.min(costs, Axis::kRow));
      if (spec.reduce == Reduction::kSum) return total;
      return tape.scale_shift(total, 1.0 / static_cast<double>(costs.value().rows()));
    }
    case LossKind::kHausdorff:
      return tape.max(tape.min(costs, Axis::kRow), Axis::kCol);
    case LossKind::kFlattenedCrossEntropy:
      break;
  }
  throw std::logic_error("reduce_costs: flattened cross entropy has no pairwise form");
}

inline ad::Var flattened_cross_entropy(ad::Tape& tape, ad::Var x, const LogTerms& y_terms) {
  detail::require_same_shape(x.value(), y_terms.log_y.value(), "flattened_cross_entropy");
  ad::Var hit = tape.mul(x, y_terms.log_y);
  ad::Var miss = tape.mul(tape.scale_shift(x, -1.0, 1.0), y_terms.log_not_y);
  return tape.scale_shift(tape.sum_all(tape.add(hit, miss)), -1.0);
}

/// Loss of one set: x target, y prediction, both N x F.
inline ad::Var loss(ad::Tape& tape, const LossSpec& spec, ad::Var x, ad::Var y,
                    double epsilon = kDefaultEpsilon) {
  detail::require_same_shape(x.value(), y.value(), "loss");
  const LogTerms terms = log_terms(tape, y, epsilon);
  if (spec.kind == LossKind::kFlattenedCrossEntropy) return flattened_cross_entropy(tape, x, terms);
  return reduce_costs(tape, spec, pairwise_cost(tape, x, terms));
}

inline ad::Var set_cross_entropy(ad::Tape& tape, ad::Var x, ad::Var y, double epsilon = kDefaultEpsilon) {
  return loss(tape, {LossKind::kSetCrossEntropy}, x, y, epsilon);
}
inline ad::Var set_average_distance(ad::Tape& tape, ad::Var x, ad::Var y, double epsilon = kDefaultEpsilon,
                                    Reduction reduce = Reduction::kMean) {
  return loss(tape, {LossKind::kSetAverage, reduce}, x, y, epsilon);
}
inline ad::Var hausdorff_distance(ad::Tape& tape, ad::Var x, ad::Var y, double epsilon = kDefaultEpsilon) {
  return loss(tape, {LossKind::kHausdorff}, x, y, epsilon);
}
inline ad::Var flattened_cross_entropy(ad::Tape& tape, ad::Var x, ad::Var y,
                                       double epsilon = kDefaultEpsilon) {
  return loss(tape, {LossKind::kFlattenedCrossEntropy}, x, y, epsilon);
}

/// Mean per-set loss over a batch stored as (B * set_size) x F row blocks.
inline ad::Var batch_loss(ad::Tape& tape, const LossSpec& spec, ad::Var x, ad::Var y, std::size_t set_size,
                          double epsilon = kDefaultEpsilon) {
  detail::require_same_shape(x.value(), y.value(), "batch_loss");
  const std::size_t rows = x.value().rows();
  if (set_size == 0 || rows % set_size != 0) {
    throw std::invalid_argument("batch_loss: " + std::to_string(rows) + " rows are not whole sets of " +
                                std::to_string(set_size));
  }
  const std::size_t n_sets = rows / set_size;
  const LogTerms terms = log_terms(tape, y, epsilon);
  const double inv = 1.0 / static_cast<double>(n_sets);
  if (spec.kind == LossKind::kFlattenedCrossEntropy) {
    return tape.scale_shift(flattened_cross_entropy(tape, x, terms), inv);
  }
  std::vector<ad::Var> per_set;
  per_set.reserve(n_sets);
  for (std::size_t s = 0; s < n_sets; ++s) {
    const std::size_t r0 = s * set_size;
    const LogTerms block{tape.slice_rows(terms.log_y, r0, set_size),
                         tape.slice_rows(terms.log_not_y, r0, set_size)};
    per_set.push_back(reduce_costs(tape, spec, pairwise_cost(tape, tape.slice_rows(x, r0, set_size), block)));
  }
  return tape.scale_shift(tape.sum_all(tape.concat(per_set, Axis::kCol)), inv);
}

}  // namespace losses
}  // namespace setloss
