#pragma once

// Central finite-difference checks for tape gradients, plus a generator of
// random computation graphs that exercises every operator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "setloss/autodiff.hpp"
#include "setloss/matrix.hpp"

namespace setloss::gradcheck {

struct Options {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
};

struct Mismatch {
  std::size_t param = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct Result {
  std::string name;
  bool passed = true;
  /// Largest |analytic - numeric| / max(rel_tol * max(|analytic|, |numeric|), abs_floor).
  /// At most 1 when passing.
  double worst_scaled_error = 0.0;
  std::optional<Mismatch> first_failure;

  std::string describe() const {
    std::ostringstream os;
    os << (passed ? "PASS " : "FAIL ") << name << " (scaled error " << worst_scaled_error << ")";
    if (first_failure) {
      const Mismatch& m = *first_failure;
      os << " param " << m.param << " [" << m.row << "," << m.col << "] analytic " << m.analytic
         << " numeric " << m.numeric;
    }
    return os.str();
  }
};

/// Builds a scalar from the leaves holding `params`. Must be a pure function
/// of the parameter values (fixed seeds for any randomness).
using GraphBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

inline double evaluate(const GraphBuilder& build, const std::vector<Matrix>& params) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Matrix& p : params) leaves.push_back(tape.variable(p));
  return build(tape, leaves).value()[0];
}

inline Result check(std::string name, const GraphBuilder& build, std::vector<Matrix> params,
                    const Options& opt = {}, std::optional<ad::OpKind> corrupt = std::nullopt) {
  Result result;
  result.name = std::move(name);
  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    if (corrupt) tape.corrupt_backward(*corrupt);
    std::vector<ad::Var> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.variable(p));
    const ad::Var root = build(tape, leaves);
    const ad::Gradients grads = tape.backward(root);
    for (const ad::Var& leaf : leaves) analytic.push_back(grads.of(leaf));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double saved = params[p][k];
      params[p][k] = saved + opt.step;
      const double up = evaluate(build, params);
      params[p][k] = saved - opt.step;
      const double down = evaluate(build, params);
      params[p][k] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[p][k];
      const double denom = std::max(opt.rel_tol * std::max(std::abs(a), std::abs(numeric)), opt.abs_floor);
      const double scaled = std::abs(a - numeric) / denom;
      result.worst_scaled_error = std::max(result.worst_scaled_error, scaled);
      if (!(scaled <= 1.0) && result.passed) {
        result.passed = false;
        result.first_failure =
            Mismatch{p, k / params[p].cols(), k % params[p].cols(), a, numeric};
      }
    }
  }
  return result;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Random graphs.

/// A recorded sequence of operator applications that can be replayed on any
/// tape. Ops are chosen against the actual values so that every check point
/// sits away from kinks (relu at 0, clip bounds, min/max ties).
class RandomGraph {
 public:
  std::vector<Matrix> params;
  std::set<ad::OpKind> ops_used;

  ad::Var build(ad::Tape& tape, std::span<const ad::Var> leaves) const {
    ad::Var h = leaves[0];
    for (const Step& s : steps_) h = apply(tape, leaves, h, s);
    return tape.sum_all(tape.mul(h, tape.constant(weights_)));
  }

  GraphBuilder builder() const {
    return [this](ad::Tape& t, std::span<const ad::Var> l) { return build(t, l); };
  }

  /// One application of `kind` to a leaf of at least 2x2, or nullopt if no
  /// acceptable proposal turns up.
  static std::optional<RandomGraph> single(ad::OpKind kind, std::mt19937_64& rng, std::size_t max_dim = 6) {
    std::uniform_int_distribution<std::size_t> dim(2, std::max<std::size_t>(2, max_dim));
    for (int attempt = 0; attempt < 200; ++attempt) {
      RandomGraph g;
      const Matrix leaf = random_matrix(dim(rng), dim(rng), rng);
      g.params.push_back(leaf);
      std::optional<Step> step = propose(kind, leaf, g.params, rng, max_dim);
      if (!step) continue;
      ad::Tape tape;
      std::vector<ad::Var> leaves;
      for (const Matrix& p : g.params) leaves.push_back(tape.variable(p));
      const Matrix& v = g.apply(tape, leaves, leaves[0], *step).value();
      if (!v.all_finite()) continue;
      g.ops_used.insert(kind);
      g.weights_ = random_matrix(v.rows(), v.cols(), rng);
      g.steps_.push_back(std::move(*step));
      return g;
    }
    return std::nullopt;
  }

  static RandomGraph generate(std::mt19937_64& rng, std::size_t n_ops, std::size_t max_dim = 6) {
    RandomGraph g;
    std::uniform_int_distribution<std::size_t> dim(1, max_dim);
    g.params.push_back(random_matrix(dim(rng), dim(rng), rng));
    for (std::size_t attempts = 0; g.steps_.size() < n_ops && attempts < 50 * n_ops; ++attempts) {
      const auto kind = ad::kAllOpKinds[std::uniform_int_distribution<std::size_t>(
          1, std::size(ad::kAllOpKinds) - 1)(rng)];
      ad::Tape tape;
      std::vector<ad::Var> leaves;
      for (const Matrix& p : g.params) leaves.push_back(tape.variable(p));
      ad::Var h = leaves[0];
      for (const Step& s : g.steps_) h = g.apply(tape, leaves, h, s);
      std::optional<Step> step = propose(kind, h.value(), g.params, rng, max_dim);
      if (!step) continue;
      for (const Matrix& m : step->new_params) leaves.push_back(tape.variable(m));
      // Reject proposals that produce non-finite or huge values.
      ad::Var next = g.apply(tape, leaves, h, *step);
      const Matrix& nv = next.value();
      if (!nv.all_finite() || std::any_of(nv.values().begin(), nv.values().end(),
                                          [](double v) { return std::abs(v) > 50.0; })) {
        g.params.resize(g.params.size() - step->new_params.size());
        continue;
      }
      g.ops_used.insert(kind);
      g.steps_.push_back(std::move(*step));
    }
    // Output shape is known only after the last step.
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Matrix& p : g.params) leaves.push_back(tape.variable(p));
    ad::Var h = leaves[0];
    for (const Step& s : g.steps_) h = g.apply(tape, leaves, h, s);
    g.weights_ = random_matrix(h.value().rows(), h.value().cols(), rng);
    return g;
  }

 private:
  struct Step {
    ad::OpKind kind;
    std::vector<Matrix> new_params;  // only used during generation
    std::size_t param = 0;           // index of the extra operand, if any
    int variant = 0;
    double a = 0.0, b = 0.0;
    std::size_t i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    std::uint64_t seed = 0;
  };

  ad::Var apply(ad::Tape& tape, std::span<const ad::Var> leaves, ad::Var h, const Step& s) const {
    using ad::OpKind;
    const Axis axis = s.variant % 2 == 0 ? Axis::kRow : Axis::kCol;
    switch (s.kind) {
      case OpKind::kMatmul:
        return s.variant == 0 ? tape.matmul(h, leaves[s.param]) : tape.matmul(h, leaves[s.param], false, true);
      case OpKind::kAdd: return tape.add(h, leaves[s.param]);
      case OpKind::kSub: return tape.sub(h, leaves[s.param]);
      case OpKind::kMul: return tape.mul(h, leaves[s.param]);
      case OpKind::kScaleShift: return tape.scale_shift(h, s.a, s.b);
      case OpKind::kRelu: return tape.relu(h);
      case OpKind::kSigmoid: return tape.sigmoid(h);
      case OpKind::kLog: return tape.log(h);
      case OpKind::kExp: return tape.exp(h);
      case OpKind::kSoftmax: return tape.softmax(h, axis);
      case OpKind::kLogSumExp: return tape.logsumexp(h, axis);
      case OpKind::kSum: return tape.sum(h, axis);
      case OpKind::kSumGroups: return tape.sum_groups(h, s.i0);
      case OpKind::kMin: return tape.min(h, axis);
      case OpKind::kMax: return tape.max(h, axis);
      case OpKind::kClip: return tape.clip(h, s.a, s.b);
      case OpKind::kConcat: {
        const ad::Var parts[] = {h, leaves[s.param]};
        return tape.concat(parts, axis);
      }
      case OpKind::kSlice: return tape.slice(h, s.i0, s.i1, s.i2, s.i3);
      case OpKind::kReshape: return tape.reshape(h, s.i0, s.i1);
      case OpKind::kDropout: {
        std::mt19937_64 local(s.seed);
        return tape.dropout(h, s.a, local);
      }
      case OpKind::kBatchNorm: {
        ad::BatchNormState state(h.value().cols());
        return tape.batchnorm(h, leaves[s.param], leaves[s.param + 1], state, true);
      }
      case OpKind::kLeaf: break;
    }
    return h;
  }

  // Adds the step's new operands to `params` and returns the step, or nullopt
  // when the op is not applicable at the current values.
  static std::optional<Step> propose(ad::OpKind kind, const Matrix& h, std::vector<Matrix>& params,
                                     std::mt19937_64& rng, std::size_t max_dim) {
    using ad::OpKind;
    Step s;
    s.kind = kind;
    s.variant = static_cast<int>(rng() % 2);
    const std::size_t r = h.rows(), c = h.cols();
    std::uniform_int_distribution<std::size_t> dim(1, max_dim);
    auto add_param = [&](Matrix m) {
      s.param = params.size();
      params.push_back(m);
      s.new_params.push_back(std::move(m));
    };
    const Axis axis = s.variant == 0 ? Axis::kRow : Axis::kCol;
    auto min_abs = [&] {
      double m = 1e300;
      for (double v : h.values()) m = std::min(m, std::abs(v));
      return m;
    };
    // Smallest gap between the extremum and the runner-up along every lane.
    auto min_lane_gap = [&] {
      double gap = 1e300;
      const std::size_t lanes = axis == Axis::kRow ? r : c;
      const std::size_t len = axis == Axis::kRow ? c : r;
      for (std::size_t l = 0; l < lanes; ++l) {
        std::vector<double> vals;
        for (std::size_t k = 0; k < len; ++k) vals.push_back(axis == Axis::kRow ? h(l, k) : h(k, l));
        std::sort(vals.begin(), vals.end());
        for (std::size_t k = 1; k < vals.size(); ++k) gap = std::min(gap, vals[k] - vals[k - 1]);
      }
      return gap;
    };
    switch (kind) {
      case OpKind::kMatmul:
        add_param(s.variant == 0 ? random_matrix(c, dim(rng), rng) : random_matrix(dim(rng), c, rng));
        return s;
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        const std::size_t shape = rng() % 4;
        add_param(shape == 0   ? random_matrix(r, c, rng)
                  : shape == 1 ? random_matrix(1, c, rng)
                  : shape == 2 ? random_matrix(r, 1, rng)
                               : random_matrix(1, 1, rng));
        return s;
      }
      case OpKind::kScaleShift:
        s.a = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        s.b = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        return s;
      case OpKind::kRelu:
        if (min_abs() < 1e-3) return std::nullopt;
        return s;
      case OpKind::kLog: {
        double lo = 1e300;
        for (double v : h.values()) lo = std::min(lo, v);
        if (lo < 0.05) return std::nullopt;
        return s;
      }
      case OpKind::kExp: {
        double hi = -1e300;
        for (double v : h.values()) hi = std::max(hi, v);
        if (hi > 3.0) return std::nullopt;
        return s;
      }
      case OpKind::kSigmoid:
      case OpKind::kSoftmax:
      case OpKind::kLogSumExp:
      case OpKind::kSum:
        return s;
      case OpKind::kMin:
      case OpKind::kMax:
        if ((axis == Axis::kRow ? c : r) > 1 && min_lane_gap() < 1e-3) return std::nullopt;
        return s;
      case OpKind::kSumGroups: {
        std::vector<std::size_t> divisors;
        for (std::size_t d = 1; d <= r; ++d)
          if (r % d == 0) divisors.push_back(d);
        s.i0 = divisors[rng() % divisors.size()];
        return s;
      }
      case OpKind::kClip: {
        std::vector<double> vals(h.values().begin(), h.values().end());
        std::sort(vals.begin(), vals.end());
        // Bounds placed in the widest gaps near the quartiles.
        const auto pick = [&](std::size_t target) -> std::optional<double> {
          if (vals.size() < 2) return std::nullopt;
          target = std::min(target, vals.size() - 2);
          const double mid = 0.5 * (vals[target] + vals[target + 1]);
          if (vals[target + 1] - vals[target] < 2e-3) return std::nullopt;
          return mid;
        };
        if (vals.size() < 4) {
          s.a = vals.front() - 1.0;
          s.b = vals.back() + 1.0;
          return s;
        }
        const auto lo = pick(vals.size() / 4 - 1);
        const auto hi = pick(3 * vals.size() / 4);
        if (!lo || !hi || *lo >= *hi) return std::nullopt;
        s.a = *lo;
        s.b = *hi;
        return s;
      }
      case OpKind::kConcat:
        add_param(axis == Axis::kRow ? random_matrix(r, dim(rng), rng) : random_matrix(dim(rng), c, rng));
        return s;
      case OpKind::kSlice: {
        s.i1 = std::uniform_int_distribution<std::size_t>(1, r)(rng);
        s.i0 = std::uniform_int_distribution<std::size_t>(0, r - s.i1)(rng);
        s.i3 = std::uniform_int_distribution<std::size_t>(1, c)(rng);
        s.i2 = std::uniform_int_distribution<std::size_t>(0, c - s.i3)(rng);
        return s;
      }
      case OpKind::kReshape: {
        std::vector<std::size_t> divisors;
        for (std::size_t d = 1; d <= r * c; ++d)
          if ((r * c) % d == 0) divisors.push_back(d);
        s.i0 = divisors[rng() % divisors.size()];
        s.i1 = r * c / s.i0;
        return s;
      }
      case OpKind::kDropout:
        s.a = std::uniform_real_distribution<double>(0.1, 0.6)(rng);
        s.seed = rng();
        return s;
      case OpKind::kBatchNorm: {
        if (r < 2) return std::nullopt;
        // Reject columns with almost no spread: the normalized value is then
        // dominated by epsilon and finite differences lose precision.
        for (std::size_t j = 0; j < c; ++j) {
          double lo = 1e300, hi = -1e300;
          for (std::size_t i = 0; i < r; ++i) {
            lo = std::min(lo, h(i, j));
            hi = std::max(hi, h(i, j));
          }
          if (hi - lo < 1e-2) return std::nullopt;
        }
        add_param(random_matrix(1, c, rng, 0.5, 1.5));
        params.push_back(random_matrix(1, c, rng));
        s.new_params.push_back(params.back());
        return s;
      }
      case OpKind::kLeaf: break;
    }
    return std::nullopt;
  }

  std::vector<Step> steps_;
  Matrix weights_;
};

}  // namespace setloss::gradcheck
