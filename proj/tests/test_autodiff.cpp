#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "setloss/autodiff.hpp"
#include "setloss/gradcheck.hpp"
#include "setloss/gumbel.hpp"
#include "support/finite_difference.hpp"

using namespace setloss;
using setloss::ad::Tape;
using setloss::ad::Var;

namespace {

Matrix random_uniform(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -3.0, double hi = 3.0) {
  return gradcheck::random_matrix(r, c, rng, lo, hi);
}

}  // namespace

TEST(LogSumExp, SingleZero) {
  Matrix out = ad::kernels::logsumexp(Matrix{{0.0}}, Axis::kRow);
  ASSERT_EQ(out.rows(), 1u);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
}

TEST(LogSumExp, IdenticalEntries) {
  Matrix out = ad::kernels::logsumexp(Matrix{{3.5, 3.5}}, Axis::kRow);
  EXPECT_NEAR(out[0], 3.5 + std::log(2.0), 1e-12);
  EXPECT_NEAR(out[0], 4.193147, 1e-6);
}

TEST(LogSumExp, LargeMagnitudeDoesNotOverflow) {
  Matrix out = ad::kernels::logsumexp(Matrix{{1000.0, 1000.0}}, Axis::kRow);
  ASSERT_TRUE(std::isfinite(out[0]));
  EXPECT_NEAR(out[0], 1000.0 + std::log(2.0), 1e-9);
  Matrix low = ad::kernels::logsumexp(Matrix{{-1000.0, -1000.0}}, Axis::kRow);
  EXPECT_NEAR(low[0], -1000.0 + std::log(2.0), 1e-9);
}

TEST(LogSumExp, EmptyReductionThrows) {
  Tape tape;
  Var x = tape.variable(Matrix(2, 0));
  try {
    tape.logsumexp(x, Axis::kRow);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("empty reduction"), std::string::npos);
  }
}

TEST(LogSumExp, ColumnAxis) {
  Matrix out = ad::kernels::logsumexp(Matrix{{0.0, 1.0}, {0.0, 1.0}}, Axis::kCol);
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 2u);
  EXPECT_NEAR(out[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(out[1], 1.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, BoundedByMaxAndMaxPlusLogLength) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t r = 1 + rng() % 6, c = 1 + rng() % 6;
    Matrix m = random_uniform(r, c, rng, -50.0, 50.0);
    for (Axis axis : {Axis::kRow, Axis::kCol}) {
      Matrix lse = ad::kernels::logsumexp(m, axis);
      const std::size_t len = axis == Axis::kRow ? c : r;
      for (std::size_t o = 0; o < lse.size(); ++o) {
        double peak = -1e300;
        for (std::size_t k = 0; k < len; ++k) peak = std::max(peak, axis == Axis::kRow ? m(o, k) : m(k, o));
        EXPECT_GE(lse[o], peak - 1e-12);
        EXPECT_LE(lse[o], peak + std::log(static_cast<double>(len)) + 1e-12);
      }
    }
  }
}

TEST(Softmax, RowsSumToOneAndSigmoidInUnitInterval) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m = random_uniform(1 + rng() % 6, 1 + rng() % 6, rng, -30.0, 30.0);
    Matrix s = ad::kernels::softmax(m, Axis::kRow);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double total = 0.0;
      for (double v : s.row(i)) total += v;
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
    Tape tape;
    Var sig = tape.sigmoid(tape.constant(m));
    for (double v : sig.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.variable(Matrix{{1.0, 2.0, 3.0}});
  Var root = tape.sum_all(x * x);
  Matrix g = tape.backward(root).of(x);
  EXPECT_EQ(g, (Matrix{{2.0, 4.0, 6.0}}));
}

TEST(Backward, LogSumExpOfEqualEntries) {
  Tape tape;
  Var x = tape.variable(Matrix{{0.0, 0.0}});
  Var root = tape.logsumexp(x, Axis::kRow);
  Matrix g = tape.backward(root).of(x);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
}

TEST(Backward, NonScalarRootThrows) {
  Tape tape;
  Var x = tape.variable(Matrix{{1.0, 2.0}});
  EXPECT_THROW(tape.backward(tape.relu(x)), std::invalid_argument);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  Var x = tape.variable(Matrix{{3.0}});
  Var y = tape.add(tape.mul(x, x), tape.scale_shift(x, 4.0));  // x^2 + 4x
  Matrix g = tape.backward(tape.sum_all(y)).of(x);
  EXPECT_DOUBLE_EQ(g[0], 10.0);
}

TEST(Backward, ConstantsReceiveNoGradientAndUnusedLeavesGetZeros) {
  Tape tape;
  Var c = tape.constant(Matrix{{1.0, 2.0}});
  Var x = tape.variable(Matrix{{0.5, 0.5}});
  Var unused = tape.variable(Matrix{{7.0}});
  auto grads = tape.backward(tape.sum_all(c * x));
  EXPECT_EQ(grads.of(x), (Matrix{{1.0, 2.0}}));
  EXPECT_EQ(grads.of(unused), (Matrix{{0.0}}));
}

TEST(MinMax, GradientRoutedToArgminOnly) {
  Tape tape;
  Var x = tape.variable(Matrix{{3.0, 1.0, 2.0}, {5.0, 4.0, 6.0}});
  Var m = tape.min(x, Axis::kRow);
  EXPECT_EQ(m.value(), (Matrix{{1.0}, {4.0}}));
  Var root = tape.sum_all(tape.mul(m, tape.constant(Matrix{{2.0}, {-3.0}})));
  Matrix g = tape.backward(root).of(x);
  EXPECT_EQ(g, (Matrix{{0.0, 2.0, 0.0}, {0.0, -3.0, 0.0}}));
}

TEST(MinMax, TiesResolveToLowestIndex) {
  Tape tape;
  Var x = tape.variable(Matrix{{2.0, 1.0, 1.0, 2.0}});
  Matrix gmin = tape.backward(tape.min(x, Axis::kRow)).of(x);
  EXPECT_EQ(gmin, (Matrix{{0.0, 1.0, 0.0, 0.0}}));
  Matrix gmax = tape.backward(tape.max(x, Axis::kRow)).of(x);
  EXPECT_EQ(gmax, (Matrix{{1.0, 0.0, 0.0, 0.0}}));
}

TEST(MinMax, RoutedGradientSumsToUpstream) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 1 + rng() % 6, c = 1 + rng() % 6;
    Tape tape;
    Var x = tape.variable(random_uniform(r, c, rng));
    for (Axis axis : {Axis::kRow, Axis::kCol}) {
      Var m = tape.min(x, axis);
      const Matrix upstream = random_uniform(m.rows(), m.cols(), rng);
      Matrix g = tape.backward(tape.sum_all(tape.mul(m, tape.constant(upstream)))).of(x);
      double routed = 0.0, expected = 0.0;
      std::size_t nonzero = 0;
      for (double v : g.values()) {
        routed += v;
        nonzero += v != 0.0;
      }
      for (double v : upstream.values()) expected += v;
      EXPECT_NEAR(routed, expected, 1e-12);
      EXPECT_LE(nonzero, m.value().size());
    }
  }
}

TEST(Clip, GradientBlockedOnClippedEntries) {
  Tape tape;
  Var x = tape.variable(Matrix{{-1.0, 0.5, 2.0}});
  Var c = tape.clip(x, 0.0, 1.0);
  EXPECT_EQ(c.value(), (Matrix{{0.0, 0.5, 1.0}}));
  EXPECT_EQ(tape.backward(tape.sum_all(c)).of(x), (Matrix{{0.0, 1.0, 0.0}}));
}

TEST(Dropout, InvertedScaling) {
  Tape tape;
  std::mt19937_64 rng(3);
  Var x = tape.variable(Matrix(50, 40, 1.0));
  Var d = tape.dropout(x, 0.5, rng);
  std::size_t kept = 0;
  for (double v : d.value().values()) {
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 2000.0, 0.5, 0.05);
  EXPECT_THROW(tape.dropout(x, 1.0, rng), std::invalid_argument);
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats) {
  Tape tape;
  ad::BatchNormState state(2);
  Var x = tape.variable(Matrix{{1.0, 10.0}, {3.0, 10.0}});
  Var gamma = tape.variable(Matrix{{1.0, 1.0}});
  Var beta = tape.variable(Matrix{{0.0, 0.5}});
  Var y = tape.batchnorm(x, gamma, beta, state, true);
  const double s = 1.0 / std::sqrt(1.0 + 1e-3);
  EXPECT_NEAR(y.value()(0, 0), -s, 1e-12);
  EXPECT_NEAR(y.value()(1, 0), s, 1e-12);
  EXPECT_NEAR(y.value()(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(state.running_mean[0], 0.01 * 2.0, 1e-12);
  EXPECT_NEAR(state.running_var[0], 0.99 * 1.0 + 0.01 * 1.0, 1e-12);
  EXPECT_NEAR(state.running_mean[1], 0.1, 1e-12);

  // Evaluation uses the running statistics and leaves them untouched.
  const ad::BatchNormState before = state;
  Var z = tape.batchnorm(x, gamma, beta, state, false);
  EXPECT_NEAR(z.value()(0, 0), (1.0 - 0.02) / std::sqrt(1.0 + 1e-3), 1e-12);
  EXPECT_EQ(state.running_mean, before.running_mean);
}

TEST(SumGroups, BitwiseOrderIndependent) {
  std::mt19937_64 rng(9);
  Matrix base = random_uniform(9, 7, rng, -1e3, 1e3);
  std::vector<std::size_t> order(9);
  std::iota(order.begin(), order.end(), 0);
  Tape t0;
  const Matrix ref = t0.sum_groups(t0.constant(base), 9).value();
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    Matrix permuted(9, 7);
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t c = 0; c < 7; ++c) permuted(r, c) = base(order[r], c);
    Tape t;
    EXPECT_EQ(t.sum_groups(t.constant(permuted), 9).value(), ref);
  }
  Tape t;
  EXPECT_THROW(t.sum_groups(t.constant(base), 4), std::invalid_argument);
}

TEST(Tape, FirstNonFiniteNamesOffendingOp) {
  Tape tape;
  Var x = tape.variable(Matrix{{1.0, 0.0}});
  Var y = tape.log(x);
  Var z = tape.sum_all(y);
  auto bad = tape.first_non_finite();
  ASSERT_TRUE(bad.has_value());
  EXPECT_EQ(*bad, y.id());
  EXPECT_EQ(ad::op_name(tape.kind(*bad)), "log");
  (void)z;
}

TEST(Matmul, TransposeVariantsMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Matrix a = random_uniform(ta ? 4 : 3, ta ? 3 : 4, rng);
      const Matrix b = random_uniform(tb ? 5 : 4, tb ? 4 : 5, rng);
      const Matrix w = random_uniform(3, 5, rng);
      auto f = [&](const std::vector<Matrix>& p) {
        Tape t;
        Var out = t.matmul(t.constant(p[0]), t.constant(p[1]), ta, tb);
        return t.sum_all(t.mul(out, t.constant(w))).value()[0];
      };
      Tape t;
      Var va = t.variable(a), vb = t.variable(b);
      auto g = t.backward(t.sum_all(t.mul(t.matmul(va, vb, ta, tb), t.constant(w))));
      auto num = oracle::numeric_gradient(f, {a, b});
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(g.of(va)[k], num[0][k], 1e-7);
      for (std::size_t k = 0; k < b.size(); ++k) EXPECT_NEAR(g.of(vb)[k], num[1][k], 1e-7);
    }
}

// Random graphs, checked against the test-side oracle.
TEST(RandomGraphs, FiveNodeGraphsMatchFiniteDifferences) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    auto graph = gradcheck::RandomGraph::generate(rng, 5);
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& p : graph.params) leaves.push_back(tape.variable(p));
    auto grads = tape.backward(graph.build(tape, leaves));
    auto num = oracle::numeric_gradient([&](const std::vector<Matrix>& p) { return gradcheck::evaluate(graph.builder(), p); },
                                         graph.params);
    for (std::size_t p = 0; p < leaves.size(); ++p) {
      const Matrix a = grads.of(leaves[p]);
      for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_TRUE(oracle::close(a[k], num[p][k], 1e-4, 1e-7))
            << "trial " << trial << " param " << p << " idx " << k << ": " << a[k] << " vs " << num[p][k];
      }
    }
  }
}

TEST(RandomGraphs, TwoHundredGraphsCoverEveryOpAndPassGradcheck) {
  std::mt19937_64 rng(2024);
  std::set<ad::OpKind> covered;
  int failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto graph = gradcheck::RandomGraph::generate(rng, 8);
    covered.insert(graph.ops_used.begin(), graph.ops_used.end());
    auto result = gradcheck::check("graph " + std::to_string(trial), graph.builder(), graph.params);
    if (!result.passed) {
      ++failures;
      ADD_FAILURE() << result.describe();
    }
  }
  EXPECT_EQ(failures, 0);
  for (ad::OpKind k : ad::kAllOpKinds) {
    if (k == ad::OpKind::kLeaf) continue;
    EXPECT_TRUE(covered.contains(k)) << "op never exercised: " << ad::op_name(k);
  }
}

TEST(Gradcheck, CorruptedBackwardIsDetected) {
  std::mt19937_64 rng(77);
  const Matrix x = random_uniform(3, 4, rng);
  auto build = [](Tape& t, std::span<const Var> p) { return t.sum_all(t.mul(t.sigmoid(p[0]), p[0])); };
  EXPECT_TRUE(gradcheck::check("sigmoid", build, {x}).passed);
  auto bad = gradcheck::check("sigmoid", build, {x}, {}, ad::OpKind::kSigmoid);
  EXPECT_FALSE(bad.passed);
  ASSERT_TRUE(bad.first_failure.has_value());
}

// ---- Gumbel-Softmax --------------------------------------------------------

TEST(GumbelSoftmax, LowTemperatureApproachesArgmax) {
  const Matrix out = gumbel_softmax_sample(Matrix{{10.0, 0.0}}, 1e-3, 2, nullptr);
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
}

TEST(GumbelSoftmax, GroupsSumToOne) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t groups = 1 + rng() % 4, k = 1 + rng() % 5;
    Matrix logits = random_uniform(3, groups * k, rng, -5.0, 5.0);
    const double tau = std::uniform_real_distribution<double>(0.05, 10.0)(rng);
    Matrix out = gumbel_softmax_sample(logits, tau, k, &rng);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t g = 0; g < groups; ++g) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += out(r, g * k + j);
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
  }
}

TEST(GumbelSoftmax, DeterministicPerSeed) {
  std::mt19937_64 a(42), b(42);
  const Matrix first = gumbel_softmax_sample(Matrix{{0.0, 0.0}}, 1.0, a);
  const Matrix second = gumbel_softmax_sample(Matrix{{0.0, 0.0}}, 1.0, b);
  EXPECT_EQ(first, second);
  EXPECT_NE(first[0], 0.5);  // noise was applied
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(gumbel_softmax_sample(Matrix{{0.0, 1.0}}, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(gumbel_softmax_sample(Matrix{{0.0, 1.0}}, -1.0, rng), std::invalid_argument);
}

TEST(GumbelSoftmax, TapeFormMatchesPlainSampleAndDifferentiates) {
  std::mt19937_64 r1(5), r2(5);
  const Matrix logits{{0.3, -1.2, 2.0, 0.1}};
  const Matrix plain = gumbel_softmax_sample(logits, 0.8, 2, &r1);
  Tape tape;
  Var x = tape.variable(logits);
  Var y = gumbel_softmax(tape, x, 0.8, 2, &r2);
  for (std::size_t k = 0; k < plain.size(); ++k) EXPECT_NEAR(y.value()[k], plain[k], 1e-12);

  auto build = [](Tape& t, std::span<const Var> p) {
    std::mt19937_64 rng(99);
    Var s = gumbel_softmax(t, p[0], 0.8, 2, &rng);
    return t.sum_all(t.mul(s, t.constant(Matrix{{1.0, 2.0, -1.0, 0.5}})));
  };
  EXPECT_TRUE(gradcheck::check("gumbel", build, {logits}).passed);
}

TEST(BinaryConcrete, EvalModeIsTemperedSigmoid) {
  Tape tape;
  Var x = tape.variable(Matrix{{2.0, -1.0}});
  Var y = binary_concrete(tape, x, 0.5, nullptr);
  EXPECT_NEAR(y.value()[0], 1.0 / (1.0 + std::exp(-4.0)), 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0 / (1.0 + std::exp(2.0)), 1e-12);
}

TEST(TemperatureSchedule, ExponentialAnnealing) {
  TemperatureSchedule s{5.0, 0.7};
  EXPECT_DOUBLE_EQ(s.at(0.0), 5.0);
  EXPECT_DOUBLE_EQ(s.at(1.0), 0.7);
  EXPECT_NEAR(s.at(0.5), std::sqrt(5.0 * 0.7), 1e-12);
}
