#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "setloss/checkpoint.hpp"
#include "setloss/gradcheck.hpp"
#include "setloss/nets.hpp"
#include "support/finite_difference.hpp"

using namespace setloss;
using namespace setloss::nets;
using setloss::ad::Tape;
using setloss::ad::Var;

namespace {

const SegmentPlan kPuzzlePlan{{9, Activation::kSoftmax}, {3, Activation::kSoftmax}, {3, Activation::kSoftmax}};

ArchConfig small_arch() {
  ArchConfig a;
  a.width = 16;
  a.latent = 8;
  return a;
}

// Random 9 x 15 puzzle-like binary set.
Matrix puzzle_like(std::mt19937_64& rng) {
  std::vector<int> pos(9);
  std::iota(pos.begin(), pos.end(), 0);
  std::shuffle(pos.begin(), pos.end(), rng);
  Matrix m(9, 15);
  for (int t = 0; t < 9; ++t) {
    m(t, t) = 1;
    m(t, 9 + pos[t] % 3) = 1;
    m(t, 12 + pos[t] / 3) = 1;
  }
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(perm[r], c);
  return out;
}

}  // namespace

TEST(SetAutoencoder, EncoderAndOutputArePermutationInvariantBitwise) {
  ArchConfig arch;
  arch.width = 64;
  SetAutoencoder model(9, 15, kPuzzlePlan, arch, 1);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = puzzle_like(rng);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape tape;
    const auto p = model.params().bind(tape);
    ForwardOptions eval;
    const Matrix z1 = model.encode(tape, p, tape.constant(x), eval).value();
    const Matrix z2 = model.encode(tape, p, tape.constant(permute_rows(x, perm)), eval).value();
    EXPECT_EQ(z1, z2);
    EXPECT_EQ(model.predict(x, 0.7), model.predict(permute_rows(x, perm), 0.7));
  }
}

TEST(SetAutoencoder, UntrainedSoftmaxSegmentsSumToOne) {
  SetAutoencoder model(9, 15, kPuzzlePlan, small_arch(), 3);
  std::mt19937_64 rng(4);
  Matrix batch(27, 15);
  for (int s = 0; s < 3; ++s) {
    const Matrix x = puzzle_like(rng);
    std::copy(x.values().begin(), x.values().end(), batch.row(9 * s).begin());
  }
  const Matrix y = model.predict(batch, 0.7);
  ASSERT_EQ(y.rows(), 27u);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    std::size_t col = 0;
    for (const Segment& s : kPuzzlePlan) {
      double total = 0.0;
      for (std::size_t k = col; k < col + s.length; ++k) {
        EXPECT_GE(y(r, k), 0.0);
        EXPECT_LE(y(r, k), 1.0);
        total += y(r, k);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
      col += s.length;
    }
  }
}

TEST(SetAutoencoder, ShapeMismatchThrows) {
  SetAutoencoder model(9, 15, kPuzzlePlan, small_arch(), 3);
  EXPECT_THROW(model.predict(Matrix(9, 14), 0.7), std::invalid_argument);
  EXPECT_THROW(model.predict(Matrix(8, 15), 0.7), std::invalid_argument);
}

TEST(SetAutoencoder, RowBiasTouchesOnlyTheFirstSegment) {
  ArchConfig a = small_arch();
  a.output_row_bias = 2.0;
  const auto bias_of = [](const SetModel& m) {
    for (const auto& [name, value] : m.state())
      if (name == "decoder/out/b") return value;
    return Matrix();
  };
  const Matrix b = bias_of(SetAutoencoder(9, 15, kPuzzlePlan, a, 1));
  ASSERT_EQ(b.cols(), 9u * 15u);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 15; ++c) EXPECT_EQ(b(0, r * 15 + c), r == c ? 2.0 : 0.0) << r << "," << c;

  const Matrix s = bias_of(SetAutoencoder(9, 16, {{16, Activation::kSigmoid}}, a, 1));
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(s(0, r * 16 + c), r == c ? 2.0 : -2.0);
}

TEST(RuleNet, OutputShapesAndBlocks) {
  for (std::size_t n : {2u, 5u}) {
    RuleNet net(n, 163, small_arch(), 5);
    EXPECT_EQ(net.input_cols(), 2 + 163 * (n + 1));
    Matrix head(1, net.input_cols());
    head[0] = 1;
    for (std::size_t k = 0; k <= n; ++k) head[2 + 163 * k + 7 * k] = 1;
    for (const Matrix& input : {head, Matrix(1, net.input_cols())}) {
      const Matrix y = net.predict(input, 0.7);
      ASSERT_EQ(y.rows(), n);
      ASSERT_EQ(y.cols(), 328u);
      for (std::size_t r = 0; r < n; ++r) {
        double a = 0, b = 0, c = 0;
        for (std::size_t k = 0; k < 2; ++k) a += y(r, k);
        for (std::size_t k = 2; k < 165; ++k) b += y(r, k);
        for (std::size_t k = 165; k < 328; ++k) c += y(r, k);
        EXPECT_NEAR(a, 1.0, 1e-9);
        EXPECT_NEAR(b, 1.0, 1e-9);
        EXPECT_NEAR(c, 1.0, 1e-9);
      }
    }
  }
}

TEST(RuleNet, HeadLengthMustMatchHops) {
  RuleNet net(2, 163, small_arch(), 5);
  try {
    net.predict(Matrix(1, 2 + 163 * 4), 0.7);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("inconsistent with n=2"), std::string::npos);
  }
}

TEST(FullModel, GradientMatchesFiniteDifferences) {
  ArchConfig arch = small_arch();
  arch.batchnorm = false;
  arch.dropout = 0.0;
  std::mt19937_64 rng(6);
  for (LatentMode mode : {LatentMode::kGumbelBinary, LatentMode::kSigmoid, LatentMode::kNone}) {
    arch.latent_mode = mode;
    SetAutoencoder model(9, 15, kPuzzlePlan, arch, 7);
    Matrix x(18, 15);
    for (int s = 0; s < 2; ++s) {
      const Matrix one = puzzle_like(rng);
      std::copy(one.values().begin(), one.values().end(), x.row(9 * s).begin());
    }
    const auto loss_of = [&](Tape& tape, std::span<const Var> p) {
      ForwardOptions opt;
      opt.temperature = 1.3;
      return losses::batch_loss(tape, {}, tape.constant(x), model.forward(tape, p, tape.constant(x), opt), 9);
    };
    Tape tape;
    const auto p = model.params().bind(tape);
    const ad::Gradients g = tape.backward(loss_of(tape, p));
    // Ten random scalar parameters against the test-side oracle.
    std::vector<Matrix> values;
    for (std::size_t i = 0; i < model.params().size(); ++i) values.push_back(model.params().value(i));
    for (int k = 0; k < 10; ++k) {
      const std::size_t pi = rng() % values.size();
      const std::size_t e = rng() % values[pi].size();
      const auto f = [&](const std::vector<Matrix>& v) {
        std::vector<Matrix> all = values;
        all[pi][e] = v[0][0];
        return gradcheck::evaluate(loss_of, all);
      };
      const double numeric = oracle::numeric_gradient(f, {Matrix::scalar(values[pi][e])})[0][0];
      const double analytic = g.of(p[pi])[e];
      EXPECT_TRUE(oracle::close(analytic, numeric, 1e-3, 1e-7))
          << model.params().name(pi) << "[" << e << "] " << analytic << " vs " << numeric;
    }
  }
}

TEST(Training, SceStepOnWorkedExampleDecreasesLoss) {
  const Matrix x{{0.0, 1.0}, {0.0, 0.0}};
  ParamStore store;
  store.add("y", Matrix{{0.1, 0.5}, {0.9, 0.5}});
  const auto sh = [&](Tape& tape) {
    const auto p = store.bind(tape);
    return std::pair{losses::set_cross_entropy(tape, tape.constant(x), p[0]), p[0]};
  };
  Tape before;
  auto [l0, y0] = sh(before);
  const Matrix grad = before.backward(l0).of(y0);
  EXPECT_GT(grad(1, 0), 0.0);
  Adam adam;
  adam.step(store, {grad});
  Tape after;
  EXPECT_LT(sh(after).first.value()[0], l0.value()[0]);
  EXPECT_LT(store.value(0)(1, 0), 0.9);
}

TEST(Training, MemorizesASingleSample) {
  // Batch statistics of a single set are constant, which makes every output
  // row identical: a stationary point of SCE. Batchnorm is therefore off.
  ArchConfig arch;
  arch.dropout = 0.0;
  arch.batchnorm = false;
  arch.latent_batchnorm = false;
  // SCE also has local minima where two output rows duplicate one target
  // and a third blends two others; the seed is pinned past one of those.
  const std::uint64_t seed = 0;
  SetAutoencoder model(9, 15, kPuzzlePlan, arch, seed);
  std::mt19937_64 rng(seed);
  Examples data;
  data.inputs.push_back(puzzle_like(rng));
  data.targets.push_back(data.inputs.back());
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = seed;
  const TrainResult r = train(model, data, cfg);
  ASSERT_EQ(r.trace.size(), 200u);
  const double residue = 2.0 * 9 * 15 * kDefaultEpsilon;
  EXPECT_LE(r.trace.back().train_loss, residue);
  EXPECT_LE(r.best_validation_loss, residue);
}

TEST(Training, SameSeedGivesIdenticalTraces) {
  std::mt19937_64 rng(10);
  Examples data;
  for (int i = 0; i < 30; ++i) {
    data.inputs.push_back(puzzle_like(rng));
    data.targets.push_back(data.inputs.back());
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 11;
  std::vector<std::vector<double>> traces;
  std::vector<NamedArrays> states;
  for (int run = 0; run < 2; ++run) {
    SetAutoencoder model(9, 15, kPuzzlePlan, small_arch(), 12);
    const TrainResult r = train(model, data, cfg);
    std::vector<double> t;
    for (const EpochStats& s : r.trace) {
      t.push_back(s.train_loss);
      t.push_back(s.validation_loss);
    }
    traces.push_back(t);
    states.push_back(model.state());
  }
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_EQ(states[0], states[1]);
}

TEST(Training, NonFiniteLossNamesTheOffendingOp) {
  Examples data;
  Matrix bad(9, 15, 0.0);
  bad[3] = std::nan("");
  data.inputs.push_back(Matrix(9, 15, 0.0));
  data.targets.push_back(bad);
  SetAutoencoder model(9, 15, kPuzzlePlan, small_arch(), 13);
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(model, data, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("first offending op: leaf"), std::string::npos) << e.what();
  }
}

TEST(Training, RejectsInvalidConfig) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.epochs = 1;
  cfg.temperature.end = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripRestoresPredictions) {
  SetAutoencoder model(9, 15, kPuzzlePlan, small_arch(), 14);
  std::mt19937_64 rng(15);
  const Matrix x = puzzle_like(rng);
  std::stringstream buf;
  write_checkpoint(buf, model.state());
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.substr(0, 4), "SETM");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  const auto restored = load_model(read_checkpoint(buf));
  EXPECT_EQ(restored->predict(x, 0.7), model.predict(x, 0.7));

  RuleNet net(3, 20, small_arch(), 16);
  std::stringstream buf2;
  write_checkpoint(buf2, net.state());
  const auto net2 = load_model(read_checkpoint(buf2));
  const Matrix head(2, net.input_cols(), 0.25);
  EXPECT_EQ(net2->predict(head, 0.7), net.predict(head, 0.7));
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  std::stringstream bad("SETX....");
  EXPECT_THROW(read_checkpoint(bad), DataError);
  NamedArrays arrays{{"w", Matrix{{1.0, 2.0}}}};
  std::stringstream buf;
  write_checkpoint(buf, arrays);
  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), DataError);
  std::stringstream full(bytes);
  EXPECT_EQ(read_checkpoint(full), arrays);
}
