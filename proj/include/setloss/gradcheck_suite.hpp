#pragma once

// The full finite-difference suite: every tape operator, every loss, and
// both models end to end (dropout and batchnorm off, noise-free latent).

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "setloss/gradcheck.hpp"
#include "setloss/losses.hpp"
#include "setloss/nets.hpp"

namespace setloss::gradcheck {

struct SuiteOptions {
  Options check;
  std::uint64_t seed = 2024;
  std::size_t random_graphs = 200;
  /// Negative control: backward of this op is deliberately wrong.
  std::optional<ad::OpKind> corrupt;
};

namespace detail {

inline Matrix interior_probabilities(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return random_matrix(rows, cols, rng, 0.05, 0.95);
}

inline Matrix binary_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(0.5);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = bit(rng) ? 1.0 : 0.0;
  return m;
}

inline Result check_model(std::string name, nets::SetModel& model, const Matrix& input, const Matrix& target,
                          const LossSpec& loss, const SuiteOptions& opt) {
  const auto build = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    nets::ForwardOptions fo;
    fo.temperature = 1.3;
    ad::Var y = model.forward(tape, p, tape.constant(input), fo);
    return losses::batch_loss(tape, loss, tape.constant(target), y, model.output_rows());
  };
  std::vector<Matrix> params;
  for (std::size_t i = 0; i < model.params().size(); ++i) params.push_back(model.params().value(i));
  return check(std::move(name), build, std::move(params), opt.check, opt.corrupt);
}

}  // namespace detail

/// One result per operator, loss, and model.
inline std::vector<Result> run_suite(const SuiteOptions& opt = {}) {
  std::vector<Result> out;
  std::mt19937_64 rng(opt.seed);

  std::vector<RandomGraph> graphs;
  for (std::size_t g = 0; g < opt.random_graphs; ++g) graphs.push_back(RandomGraph::generate(rng, 8));
  const auto merge = [](Result& into, const Result& r) {
    into.worst_scaled_error = std::max(into.worst_scaled_error, r.worst_scaled_error);
    if (!r.passed && into.passed) {
      into.passed = false;
      into.first_failure = r.first_failure;
    }
  };
  // Each op alone on a fresh leaf, then inside up to five random graphs.
  for (ad::OpKind k : ad::kAllOpKinds) {
    if (k == ad::OpKind::kLeaf) continue;
    Result op;
    op.name = "op " + std::string(ad::op_name(k));
    const std::optional<RandomGraph> alone = RandomGraph::single(k, rng);
    if (alone) merge(op, check(op.name, alone->builder(), alone->params, opt.check, opt.corrupt));
    std::size_t used = 0;
    for (const RandomGraph& g : graphs) {
      if (used == 5) break;
      if (!g.ops_used.contains(k)) continue;
      merge(op, check(op.name, g.builder(), g.params, opt.check, opt.corrupt));
      ++used;
    }
    if (!alone && used == 0) {
      op.name += " (not exercised)";
      op.passed = false;
    }
    out.push_back(op);
  }
  Result aggregate;
  aggregate.name = "random graphs x" + std::to_string(graphs.size());
  for (const RandomGraph& g : graphs) {
    merge(aggregate, check(aggregate.name, g.builder(), g.params, opt.check, opt.corrupt));
  }
  out.push_back(aggregate);

  // Losses at interior points, gradient with respect to the prediction.
  const std::vector<std::pair<std::string, LossSpec>> specs = {
      {"loss sce", {LossKind::kSetCrossEntropy}},
      {"loss avg (mean)", {LossKind::kSetAverage, Reduction::kMean}},
      {"loss avg (sum)", {LossKind::kSetAverage, Reduction::kSum}},
      {"loss hausdorff", {LossKind::kHausdorff}},
      {"loss ce", {LossKind::kFlattenedCrossEntropy}},
  };
  for (const auto& [name, spec] : specs) {
    const Matrix x = detail::binary_rows(8, 5, rng);
    const Matrix y = detail::interior_probabilities(8, 5, rng);
    const auto build = [&, spec = spec](ad::Tape& tape, std::span<const ad::Var> p) {
      return losses::batch_loss(tape, spec, tape.constant(x), p[0], 4);
    };
    out.push_back(check(name, build, {y}, opt.check, opt.corrupt));
  }
  {
    const Matrix x{{0.0, 1.0}, {0.0, 0.0}};
    const Matrix y2{{0.1, 0.5}, {0.9, 0.5}};
    Options tight = opt.check;
    tight.rel_tol = std::min(tight.rel_tol, 1e-6);
    const auto build = [&](ad::Tape& tape, std::span<const ad::Var> p) {
      return losses::set_cross_entropy(tape, tape.constant(x), p[0]);
    };
    out.push_back(check("loss sce at worked example Y2", build, {y2}, tight, opt.corrupt));
  }

  // Models end to end.
  nets::ArchConfig arch;
  arch.width = 8;
  arch.latent = 6;
  arch.batchnorm = false;
  arch.latent_batchnorm = false;
  arch.dropout = 0.0;
  const SegmentPlan puzzle_plan = {{9, Activation::kSoftmax}, {3, Activation::kSoftmax}, {3, Activation::kSoftmax}};
  for (nets::LatentMode mode : {nets::LatentMode::kGumbelBinary, nets::LatentMode::kSigmoid}) {
    arch.latent_mode = mode;
    nets::SetAutoencoder model(9, 15, puzzle_plan, arch, opt.seed);
    Matrix x(18, 15);
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<std::size_t> pos(9);
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t t = 0; t < 9; ++t) {
        x(9 * s + t, t) = 1.0;
        x(9 * s + t, 9 + pos[t] % 3) = 1.0;
        x(9 * s + t, 12 + pos[t] / 3) = 1.0;
      }
    }
    out.push_back(detail::check_model("model autoencoder (" + std::string(nets::latent_mode_name(mode)) + ")",
                                      model, x, x, {LossKind::kSetCrossEntropy}, opt));
  }
  {
    const std::size_t entities = 5, hops = 2;
    nets::RuleNet model(hops, entities, arch, opt.seed);
    Matrix head(2, model.input_cols());
    Matrix body(2 * hops, model.output_cols());
    for (std::size_t s = 0; s < 2; ++s) {
      head(s, 0) = 1.0;
      for (std::size_t k = 0; k <= hops; ++k) head(s, 2 + k * entities + (s + k) % entities) = 1.0;
      for (std::size_t k = 0; k < hops; ++k) {
        body(s * hops + k, 0) = 1.0;
        body(s * hops + k, 2 + (s + k) % entities) = 1.0;
        body(s * hops + k, 2 + entities + (s + k + 1) % entities) = 1.0;
      }
    }
    out.push_back(detail::check_model("model rule net", model, head, body, {LossKind::kSetCrossEntropy}, opt));
  }
  return out;
}

}  // namespace setloss::gradcheck
