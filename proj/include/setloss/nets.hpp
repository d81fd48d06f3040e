#pragma once

// Set autoencoder (Deep Sets encoder + dense decoder), the encoder-free rule
// predictor, Adam, and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "setloss/autodiff.hpp"
#include "setloss/checkpoint.hpp"
#include "setloss/gumbel.hpp"
#include "setloss/losses.hpp"
#include "setloss/matrix.hpp"
#include "setloss/segments.hpp"

namespace setloss::nets {

enum class LatentMode { kGumbelBinary, kSigmoid, kNone };

inline std::string_view latent_mode_name(LatentMode m) {
  switch (m) {
    case LatentMode::kGumbelBinary: return "gumbel-binary";
    case LatentMode::kSigmoid: return "sigmoid";
    case LatentMode::kNone: return "none";
  }
  return "?";
}

inline std::optional<LatentMode> parse_latent_mode(std::string_view s) {
  for (LatentMode m : {LatentMode::kGumbelBinary, LatentMode::kSigmoid, LatentMode::kNone})
    if (latent_mode_name(m) == s) return m;
  return std::nullopt;
}

/// Raised when training produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Independent stream `stream` derived from `seed` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Parameters and layers.

class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value) {
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Matrix& value(std::size_t i) { return entries_.at(i).second; }
  const Matrix& value(std::size_t i) const { return entries_.at(i).second; }
  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  const NamedArrays& entries() const noexcept { return entries_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  std::vector<ad::Var> bind(ad::Tape& tape) const {
    std::vector<ad::Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.variable(e.second));
    return vars;
  }

 private:
  NamedArrays entries_;
};

/// Uniform(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Dense create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
    Dense d;
    d.weight = store.add(name + "/w", glorot_uniform(in, out, rng));
    d.bias = store.add(name + "/b", Matrix(1, out));
    return d;
  }

  ad::Var operator()(ad::Tape& tape, std::span<const ad::Var> p, ad::Var x) const {
    return tape.add(tape.matmul(x, p[weight]), p[bias]);
  }
};

struct ArchConfig {
  std::size_t width = 300;
  std::size_t latent = 100;
  LatentMode latent_mode = LatentMode::kGumbelBinary;
  /// 2: independent binary concrete units. k > 2: k-way Gumbel-Softmax groups.
  std::size_t latent_categories = 2;
  bool batchnorm = true;
  double dropout = 0.5;
  /// Batch-normalize the latent logits before the latent activation.
  bool latent_batchnorm = true;
  /// Initial output bias of +b at index (r mod length) of the first segment
  /// of output row r, and -b elsewhere in it if that segment is sigmoid, so
  /// rows start out near different outputs.
  double output_row_bias = 0.0;
};

struct ForwardOptions {
  bool training = false;
  double temperature = 0.7;
  /// Source of Gumbel and dropout noise; used only when training.
  std::mt19937_64* rng = nullptr;
};

/// fc(width), relu, batchnorm, dropout; repeated, then dense to rows x cols
/// and per-segment activation.
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore& store, std::vector<ad::BatchNormState>& bn, std::size_t in, const ArchConfig& arch,
          std::size_t rows, std::size_t cols, SegmentPlan plan, std::mt19937_64& rng)
      : rows_(rows), cols_(cols), plan_(std::move(plan)), batchnorm_(arch.batchnorm), dropout_(arch.dropout) {
    check_plan(plan_, cols);
    std::size_t width_in = in;
    for (int k = 0; k < 2; ++k) {
      const std::string name = "decoder/fc" + std::to_string(k);
      Block b;
      b.fc = Dense::create(store, name, width_in, arch.width, rng);
      if (batchnorm_) {
        b.gamma = store.add(name + "/bn_gamma", Matrix(1, arch.width, 1.0));
        b.beta = store.add(name + "/bn_beta", Matrix(1, arch.width));
        b.state = bn.size();
        bn.emplace_back(arch.width);
      }
      blocks_.push_back(b);
      width_in = arch.width;
    }
    out_ = Dense::create(store, "decoder/out", width_in, rows * cols, rng);
    Matrix& bias = store.value(out_.bias);
    const Segment& first = plan_.front();
    for (std::size_t r = 0; r < rows && arch.output_row_bias != 0.0; ++r) {
      if (first.activation == Activation::kSigmoid) {
        for (std::size_t k = 0; k < first.length; ++k) bias[r * cols + k] = -arch.output_row_bias;
      }
      bias[r * cols + r % first.length] = arch.output_row_bias;
    }
  }

  ad::Var operator()(ad::Tape& tape, std::span<const ad::Var> p, std::vector<ad::BatchNormState>& bn, ad::Var z,
                     const ForwardOptions& opt) const {
    ad::Var h = z;
    for (const Block& b : blocks_) {
      h = tape.relu(b.fc(tape, p, h));
      if (batchnorm_) h = tape.batchnorm(h, p[b.gamma], p[b.beta], bn[b.state], opt.training);
      if (opt.training && dropout_ > 0.0 && opt.rng) h = tape.dropout(h, dropout_, *opt.rng);
    }
    const std::size_t batch = z.rows();
    ad::Var logits = tape.reshape(out_(tape, p, h), batch * rows_, cols_);
    return activate_segments(tape, logits, plan_);
  }

 private:
  struct Block {
    Dense fc;
    std::size_t gamma = 0, beta = 0, state = 0;
  };
  std::vector<Block> blocks_;
  Dense out_;
  std::size_t rows_ = 0, cols_ = 0;
  SegmentPlan plan_;
  bool batchnorm_ = true;
  double dropout_ = 0.5;
};

// ---------------------------------------------------------------------------
// Models.

enum class ModelKind { kSetAutoencoder = 1, kRuleNet = 2 };

/// Shared interface for the training loop. Each example is an input matrix
/// of input_rows() x input_cols() and an output of output_rows() x
/// output_cols(); batches stack examples vertically.
class SetModel {
 public:
  virtual ~SetModel() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t input_rows() const = 0;
  virtual std::size_t input_cols() const = 0;
  virtual std::size_t output_rows() const = 0;
  virtual std::size_t output_cols() const = 0;
  virtual const SegmentPlan& segments() const = 0;
  virtual const ArchConfig& arch() const = 0;
  virtual ad::Var forward(ad::Tape& tape, std::span<const ad::Var> p, ad::Var input, const ForwardOptions& opt) = 0;

  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  std::vector<ad::BatchNormState>& batchnorm_states() noexcept { return bn_; }

  /// Evaluation-mode outputs for stacked inputs, processed in chunks.
  Matrix predict(const Matrix& inputs, double temperature, std::size_t chunk = 256) {
    check_input(inputs);
    const std::size_t n = inputs.rows() / input_rows();
    Matrix out(n * output_rows(), output_cols());
    for (std::size_t first = 0; first < n; first += chunk) {
      const std::size_t count = std::min(chunk, n - first);
      ad::Tape tape;
      const std::vector<ad::Var> p = params_.bind(tape);
      ForwardOptions opt;
      opt.temperature = temperature;
      ad::Var x = tape.constant(inputs.row_block(first * input_rows(), count * input_rows()));
      const Matrix& y = forward(tape, p, x, opt).value();
      std::copy(y.values().begin(), y.values().end(), out.row(first * output_rows()).begin());
    }
    return out;
  }

  /// Parameters, batchnorm running statistics, and architecture metadata.
  NamedArrays state() const {
    NamedArrays out = params_.entries();
    for (std::size_t k = 0; k < bn_.size(); ++k) {
      out.emplace_back("bn" + std::to_string(k) + "/running_mean", bn_[k].running_mean);
      out.emplace_back("bn" + std::to_string(k) + "/running_var", bn_[k].running_var);
    }
    out.emplace_back("meta/model", metadata());
    Matrix plan(2, segments().size());
    for (std::size_t s = 0; s < segments().size(); ++s) {
      plan(0, s) = static_cast<double>(segments()[s].length);
      plan(1, s) = segments()[s].activation == Activation::kSoftmax ? 1.0 : 0.0;
    }
    out.emplace_back("meta/segments", std::move(plan));
    return out;
  }

  void load_state(const NamedArrays& arrays) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Matrix& m = find_array(arrays, params_.name(i));
      if (!m.same_shape(params_.value(i))) {
        throw DataError("checkpoint array '" + params_.name(i) + "' has shape " + shape_string(m) +
                        ", expected " + shape_string(params_.value(i)));
      }
      params_.value(i) = m;
    }
    for (std::size_t k = 0; k < bn_.size(); ++k) {
      bn_[k].running_mean = find_array(arrays, "bn" + std::to_string(k) + "/running_mean");
      bn_[k].running_var = find_array(arrays, "bn" + std::to_string(k) + "/running_var");
    }
  }

  /// Row count only; forward() validates the width with a model-specific message.
  void check_input(const Matrix& inputs) const {
    if (inputs.rows() % input_rows() != 0) {
      throw std::invalid_argument("model input " + shape_string(inputs) + " is not a stack of " +
                                  std::to_string(input_rows()) + "x" + std::to_string(input_cols()) +
                                  " examples");
    }
  }

 protected:
  /// Row vector describing the model; enough to rebuild it from a checkpoint.
  virtual Matrix metadata() const = 0;

  static std::vector<double> arch_fields(const ArchConfig& a) {
    return {static_cast<double>(a.width), static_cast<double>(a.latent),
            static_cast<double>(static_cast<int>(a.latent_mode)), static_cast<double>(a.latent_categories),
            a.batchnorm ? 1.0 : 0.0, a.dropout, a.latent_batchnorm ? 1.0 : 0.0, a.output_row_bias};
  }

  ParamStore params_;
  std::vector<ad::BatchNormState> bn_;
};

/// Deep Sets encoder rho(sum_i phi(x_i)) to a latent code, then Decoder.
class SetAutoencoder : public SetModel {
 public:
  SetAutoencoder(std::size_t elements, std::size_t features, SegmentPlan plan, ArchConfig arch, std::uint64_t seed)
      : n_(elements), f_(features), plan_(std::move(plan)), arch_(arch) {
    check_plan(plan_, features);
    if (arch_.latent_mode == LatentMode::kGumbelBinary && arch_.latent_categories > 2 &&
        arch_.latent % arch_.latent_categories != 0) {
      throw std::invalid_argument("latent size must be a multiple of latent_categories");
    }
    std::mt19937_64 rng(seed);
    phi_[0] = Dense::create(params_, "encoder/phi0", f_, arch_.width, rng);
    phi_[1] = Dense::create(params_, "encoder/phi1", arch_.width, arch_.width, rng);
    rho_[0] = Dense::create(params_, "encoder/rho0", arch_.width, arch_.width, rng);
    rho_[1] = Dense::create(params_, "encoder/rho1", arch_.width, arch_.width, rng);
    to_latent_ = Dense::create(params_, "encoder/latent", arch_.width, arch_.latent, rng);
    if (arch_.latent_batchnorm) {
      latent_gamma_ = params_.add("encoder/latent_bn_gamma", Matrix(1, arch_.latent, 1.0));
      latent_beta_ = params_.add("encoder/latent_bn_beta", Matrix(1, arch_.latent));
      latent_state_ = bn_.size();
      bn_.emplace_back(arch_.latent);
    }
    decoder_ = Decoder(params_, bn_, arch_.latent, arch_, n_, f_, plan_, rng);
  }

  ModelKind kind() const override { return ModelKind::kSetAutoencoder; }
  std::size_t input_rows() const override { return n_; }
  std::size_t input_cols() const override { return f_; }
  std::size_t output_rows() const override { return n_; }
  std::size_t output_cols() const override { return f_; }
  const SegmentPlan& segments() const override { return plan_; }
  const ArchConfig& arch() const override { return arch_; }

  /// Latent code (B x latent) for stacked sets x ((B * N) x F).
  ad::Var encode(ad::Tape& tape, std::span<const ad::Var> p, ad::Var x, const ForwardOptions& opt) {
    if (x.cols() != f_ || x.rows() % n_ != 0) {
      throw std::invalid_argument("autoencode_forward: input " + shape_string(x.value()) +
                                  " does not match sets of " + std::to_string(n_) + "x" + std::to_string(f_));
    }
    ad::Var h = tape.relu(phi_[0](tape, p, x));
    h = tape.relu(phi_[1](tape, p, h));
    h = tape.sum_groups(h, n_);
    h = tape.relu(rho_[0](tape, p, h));
    h = tape.relu(rho_[1](tape, p, h));
    ad::Var logits = to_latent_(tape, p, h);
    if (arch_.latent_batchnorm) {
      logits = tape.batchnorm(logits, p[latent_gamma_], p[latent_beta_], bn_[latent_state_], opt.training);
    }
    std::mt19937_64* noise = opt.training ? opt.rng : nullptr;
    switch (arch_.latent_mode) {
      case LatentMode::kGumbelBinary:
        if (arch_.latent_categories <= 2) return binary_concrete(tape, logits, opt.temperature, noise);
        return gumbel_softmax(tape, logits, opt.temperature, arch_.latent_categories, noise);
      case LatentMode::kSigmoid: return tape.sigmoid(logits);
      case LatentMode::kNone: return logits;
    }
    return logits;
  }

  ad::Var forward(ad::Tape& tape, std::span<const ad::Var> p, ad::Var input, const ForwardOptions& opt) override {
    return decoder_(tape, p, bn_, encode(tape, p, input, opt), opt);
  }

 protected:
  Matrix metadata() const override {
    std::vector<double> v{static_cast<double>(ModelKind::kSetAutoencoder), static_cast<double>(n_),
                          static_cast<double>(f_)};
    for (double a : arch_fields(arch_)) v.push_back(a);
    return Matrix::row_vector(v);
  }

 private:
  std::size_t n_, f_;
  SegmentPlan plan_;
  ArchConfig arch_;
  Dense phi_[2], rho_[2], to_latent_;
  std::size_t latent_gamma_ = 0, latent_beta_ = 0, latent_state_ = 0;
  Decoder decoder_;
};

/// Body predictor: head vector straight into the decoder, n x (2 + 2E) output
/// with softmax blocks (predicate, arg0, arg1).
class RuleNet : public SetModel {
 public:
  RuleNet(std::size_t hops, std::size_t entities, ArchConfig arch, std::uint64_t seed,
          std::size_t head_predicates = 2, std::size_t body_predicates = 2)
      : n_(hops), entities_(entities), head_predicates_(head_predicates), arch_(arch) {
    if (n_ == 0 || entities_ == 0) throw std::invalid_argument("RuleNet: hops and entities must be positive");
    plan_ = {{body_predicates, Activation::kSoftmax},
             {entities_, Activation::kSoftmax},
             {entities_, Activation::kSoftmax}};
    std::mt19937_64 rng(seed);
    decoder_ = Decoder(params_, bn_, input_cols(), arch_, n_, plan_width(plan_), plan_, rng);
  }

  ModelKind kind() const override { return ModelKind::kRuleNet; }
  std::size_t input_rows() const override { return 1; }
  std::size_t input_cols() const override { return head_predicates_ + entities_ * (n_ + 1); }
  std::size_t output_rows() const override { return n_; }
  std::size_t output_cols() const override { return plan_width(plan_); }
  const SegmentPlan& segments() const override { return plan_; }
  const ArchConfig& arch() const override { return arch_; }

  ad::Var forward(ad::Tape& tape, std::span<const ad::Var> p, ad::Var input, const ForwardOptions& opt) override {
    if (input.cols() != input_cols()) {
      throw std::invalid_argument("rule_forward: head length " + std::to_string(input.cols()) +
                                  " inconsistent with n=" + std::to_string(n_) + " (expected " +
                                  std::to_string(input_cols()) + ")");
    }
    return decoder_(tape, p, bn_, input, opt);
  }

 protected:
  Matrix metadata() const override {
    std::vector<double> v{static_cast<double>(ModelKind::kRuleNet), static_cast<double>(n_),
                          static_cast<double>(entities_), static_cast<double>(head_predicates_),
                          static_cast<double>(plan_[0].length)};
    for (double a : arch_fields(arch_)) v.push_back(a);
    return Matrix::row_vector(v);
  }

 private:
  std::size_t n_, entities_, head_predicates_;
  SegmentPlan plan_;
  ArchConfig arch_;
  Decoder decoder_;
};

inline ArchConfig arch_from_fields(std::span<const double> f) {
  ArchConfig a;
  a.width = static_cast<std::size_t>(f[0]);
  a.latent = static_cast<std::size_t>(f[1]);
  a.latent_mode = static_cast<LatentMode>(static_cast<int>(f[2]));
  a.latent_categories = static_cast<std::size_t>(f[3]);
  a.batchnorm = f[4] != 0.0;
  a.dropout = f[5];
  a.latent_batchnorm = f[6] != 0.0;
  a.output_row_bias = f[7];
  return a;
}

/// Rebuilds a model from SetModel::state() output.
inline std::unique_ptr<SetModel> load_model(const NamedArrays& arrays) {
  const Matrix& meta = find_array(arrays, "meta/model");
  const auto v = meta.values();
  std::unique_ptr<SetModel> model;
  if (v.size() == 11 && v[0] == static_cast<double>(ModelKind::kSetAutoencoder)) {
    const Matrix& seg = find_array(arrays, "meta/segments");
    SegmentPlan plan;
    for (std::size_t s = 0; s < seg.cols(); ++s)
      plan.push_back({static_cast<std::size_t>(seg(0, s)), seg(1, s) != 0.0 ? Activation::kSoftmax
                                                                             : Activation::kSigmoid});
    model = std::make_unique<SetAutoencoder>(static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]),
                                             plan, arch_from_fields(v.subspan(3)), 0);
  } else if (v.size() == 13 && v[0] == static_cast<double>(ModelKind::kRuleNet)) {
    model = std::make_unique<RuleNet>(static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]),
                                      arch_from_fields(v.subspan(5)), 0, static_cast<std::size_t>(v[3]),
                                      static_cast<std::size_t>(v[4]));
  } else {
    throw DataError("checkpoint: unrecognized model metadata");
  }
  model->load_state(arrays);
  return model;
}

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, const std::vector<Matrix>& grads) {
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.value(i).rows(), params.value(i).cols());
        v_.emplace_back(params.value(i).rows(), params.value(i).cols());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params.value(i).values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      const auto g = grads[i].values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        w[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }

  NamedArrays state(const ParamStore& params) const {
    NamedArrays out;
    out.emplace_back("adam/step", Matrix::scalar(static_cast<double>(t_)));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back("adam/m/" + params.name(i), m_[i]);
      out.emplace_back("adam/v/" + params.name(i), v_[i]);
    }
    return out;
  }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training.

/// Paired examples; inputs[i] and targets[i] have the model's per-example shapes.
struct Examples {
  std::vector<Matrix> inputs;
  std::vector<Matrix> targets;

  std::size_t size() const noexcept { return inputs.size(); }
};

inline Matrix stack(const std::vector<Matrix>& items, std::span<const std::size_t> order) {
  if (order.empty()) return Matrix();
  const std::size_t rows = items[order[0]].rows(), cols = items[order[0]].cols();
  Matrix out(rows * order.size(), cols);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Matrix& m = items[order[k]];
    if (m.rows() != rows || m.cols() != cols) throw std::invalid_argument("stack: ragged examples");
    std::copy(m.values().begin(), m.values().end(), out.row(k * rows).begin());
  }
  return out;
}

struct TrainConfig {
  LossSpec loss;
  /// Clip bound of the elementwise cross entropy.
  double epsilon = kDefaultEpsilon;
  AdamConfig adam;
  std::size_t epochs = 30;
  std::size_t batch_size = 100;
  TemperatureSchedule temperature;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  ArchConfig arch;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::invalid_argument("TrainConfig: epsilon must be in (0, 0.5)");
    if (!(temperature.end > 0.0) || !(temperature.start > 0.0)) {
      throw std::invalid_argument("TrainConfig: temperatures must be positive");
    }
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      throw std::invalid_argument("TrainConfig: validation_fraction must be in [0, 1)");
    }
  }

  double temperature_at(std::size_t epoch) const {
    return temperature.at(epochs <= 1 ? 1.0 : static_cast<double>(epoch) / static_cast<double>(epochs - 1));
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double temperature = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  std::uint64_t steps = 0;
};

/// Mean loss of `examples[idx]` in evaluation mode.
inline double evaluate_loss(SetModel& model, const Examples& examples, std::span<const std::size_t> idx,
                            const LossSpec& loss, double temperature, std::size_t chunk = 256,
                            double epsilon = kDefaultEpsilon) {
  double total = 0.0;
  for (std::size_t first = 0; first < idx.size(); first += chunk) {
    const auto part = idx.subspan(first, std::min(chunk, idx.size() - first));
    ad::Tape tape;
    const std::vector<ad::Var> p = model.params().bind(tape);
    ForwardOptions opt;
    opt.temperature = temperature;
    ad::Var y = model.forward(tape, p, tape.constant(stack(examples.inputs, part)), opt);
    ad::Var l = losses::batch_loss(tape, loss, tape.constant(stack(examples.targets, part)), y,
                                   model.output_rows(), epsilon);
    total += l.value()[0] * static_cast<double>(part.size());
  }
  return idx.empty() ? 0.0 : total / static_cast<double>(idx.size());
}

/// Replaces batchnorm running statistics with the exact statistics of up to
/// `max_examples` of `examples[idx]`, computed in one noise-free batch.
inline void recalibrate_batchnorm(SetModel& model, const Examples& examples, std::span<const std::size_t> idx,
                                  double temperature, std::size_t max_examples = 1000) {
  std::vector<ad::BatchNormState>& states = model.batchnorm_states();
  if (states.empty() || idx.empty()) return;
  const auto part = idx.first(std::min(max_examples, idx.size()));
  std::vector<double> momenta;
  for (ad::BatchNormState& st : states) {
    momenta.push_back(st.momentum);
    st.momentum = 0.0;
  }
  ad::Tape tape;
  const std::vector<ad::Var> p = model.params().bind(tape);
  ForwardOptions opt;
  opt.training = true;  // batch statistics; rng stays null so no noise is drawn
  opt.temperature = temperature;
  model.forward(tape, p, tape.constant(stack(examples.inputs, part)), opt);
  for (std::size_t k = 0; k < states.size(); ++k) states[k].momentum = momenta[k];
}

/// Trains with Adam on shuffled minibatches and restores the parameters of
/// the epoch with the lowest validation loss. The last `validation_fraction`
/// of a seeded shuffle is held out; with too few examples the training set
/// doubles as validation set.
inline TrainResult train(SetModel& model, const Examples& data, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.targets.size() != data.size()) throw std::invalid_argument("train: inputs and targets differ in count");

  std::mt19937_64 split_rng(derive_seed(cfg.seed, 1));
  std::mt19937_64 order_rng(derive_seed(cfg.seed, 2));
  std::mt19937_64 noise_rng(derive_seed(cfg.seed, 3));

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(data.size()));
  std::vector<std::size_t> train_idx(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> val_idx(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  if (val_idx.empty()) val_idx = train_idx;

  Adam adam(cfg.adam);
  TrainResult result;
  NamedArrays best;
  const double eval_temperature = cfg.temperature.end;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.temperature = cfg.temperature_at(epoch);
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < train_idx.size(); first += cfg.batch_size) {
      const auto batch = std::span<const std::size_t>(train_idx).subspan(
          first, std::min(cfg.batch_size, train_idx.size() - first));
      ad::Tape tape;
      const std::vector<ad::Var> p = model.params().bind(tape);
      ForwardOptions opt;
      opt.training = true;
      opt.temperature = stats.temperature;
      opt.rng = &noise_rng;
      ad::Var y = model.forward(tape, p, tape.constant(stack(data.inputs, batch)), opt);
      ad::Var loss = losses::batch_loss(tape, cfg.loss, tape.constant(stack(data.targets, batch)), y,
                                        model.output_rows(), cfg.epsilon);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        const auto bad = tape.first_non_finite();
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + "; first offending op: " +
                             (bad ? std::string(ad::op_name(tape.kind(*bad))) + " (node " +
                                        std::to_string(*bad) + ")"
                                  : std::string("unknown")));
      }
      const ad::Gradients g = tape.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(p.size());
      for (const ad::Var& v : p) grads.push_back(g.of(v));
      adam.step(model.params(), grads);
      loss_sum += value * static_cast<double>(batch.size());
    }
    stats.train_loss = loss_sum / static_cast<double>(train_idx.size());
    recalibrate_batchnorm(model, data, train_idx, eval_temperature);
    stats.validation_loss = evaluate_loss(model, data, val_idx, cfg.loss, eval_temperature, 256, cfg.epsilon);
    if (!std::isfinite(stats.validation_loss)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (epoch == 0 || stats.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = stats.validation_loss;
      result.best_epoch = epoch;
      best = model.state();
    }
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.load_state(best);
  result.steps = adam.steps();
  return result;
}

}  // namespace setloss::nets
