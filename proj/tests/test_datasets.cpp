#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "setloss/datasets.hpp"

namespace {

using setloss::Matrix;
using namespace setloss::data;

std::multiset<std::vector<double>> row_multiset(const Matrix& m) {
  std::multiset<std::vector<double>> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) rows.emplace(m.row(r).begin(), m.row(r).end());
  return rows;
}

bool rows_distinct(const Matrix& m) {
  const auto rows = row_multiset(m);
  return std::set(rows.begin(), rows.end()).size() == m.rows();
}

// Counts simple walks of n edges by nested iteration over an adjacency
// matrix, without reusing the DFS under test.
std::size_t brute_force_walks(const KnowledgeGraph& g, std::size_t n) {
  const std::size_t v = g.size();
  std::vector<std::vector<bool>> adj(v, std::vector<bool>(v, false));
  for (std::size_t a = 0; a < v; ++a)
    for (std::size_t b = 0; b < v; ++b) adj[a][b] = g.has_edge(a, b);
  std::size_t count = 0;
  std::vector<std::size_t> walk(n + 1, 0);
  // Odometer over all v^(n+1) sequences.
  while (true) {
    bool ok = true;
    for (std::size_t k = 0; k < n && ok; ++k) ok = adj[walk[k]][walk[k + 1]];
    for (std::size_t i = 0; i <= n && ok; ++i)
      for (std::size_t j = i + 1; j <= n && ok; ++j) ok = walk[i] != walk[j];
    if (ok) ++count;
    std::size_t pos = 0;
    while (pos <= n && ++walk[pos] == v) walk[pos++] = 0;
    if (pos > n) break;
  }
  return count;
}

KnowledgeGraph random_graph(std::size_t nodes, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution edge(p);
  KnowledgeGraph g;
  for (std::size_t i = 0; i < nodes; ++i) g.entity("v" + std::to_string(i));
  for (std::size_t a = 0; a < nodes; ++a)
    for (std::size_t b = a + 1; b < nodes; ++b)
      if (edge(rng)) g.add_edge(a, b);
  return g;
}

TEST(Puzzle, SolvedStateFirstRow) {
  const Matrix m = encode_puzzle_state(solved_state()).values();
  const std::vector<double> expected = {1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0};
  EXPECT_EQ(std::vector<double>(m.row(0).begin(), m.row(0).end()), expected);
}

TEST(Puzzle, EncodingInvariants) {
  for (const PuzzleState& s : sample_states(200, 4)) {
    const Matrix m = encode_puzzle_state(s).values();
    ASSERT_EQ(m.rows(), 9u);
    ASSERT_EQ(m.cols(), 15u);
    for (std::size_t r = 0; r < 9; ++r) {
      double sum = 0;
      for (double v : m.row(r)) sum += v;
      EXPECT_EQ(sum, 3.0);
    }
    for (std::size_t c = 0; c < 9; ++c) {
      double col = 0;
      for (std::size_t r = 0; r < 9; ++r) col += m(r, c);
      EXPECT_EQ(col, 1.0);
    }
    EXPECT_TRUE(rows_distinct(m));
  }
}

TEST(Puzzle, InvalidStateThrows) {
  PuzzleState s = solved_state();
  s[3] = s[4];
  EXPECT_THROW(encode_puzzle_state(s), std::invalid_argument);
}

TEST(Puzzle, RankRoundTrip) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::uint32_t> pick(0, kPuzzleStates - 1);
  for (int i = 0; i < 500; ++i) {
    const std::uint32_t r = pick(rng);
    EXPECT_EQ(rank_state(unrank_state(r)), r);
  }
  EXPECT_EQ(rank_state(solved_state()), 0u);
  EXPECT_THROW(unrank_state(kPuzzleStates), std::out_of_range);
}

TEST(Puzzle, ExhaustiveEnumerationHasDistinctEncodings) {
  const std::vector<PuzzleState> all = enumerate_states();
  ASSERT_EQ(all.size(), 362880u);
  std::set<std::vector<double>> encodings;
  for (const PuzzleState& s : all) {
    const Matrix m = encode_puzzle_state(s).values();
    encodings.emplace(m.values().begin(), m.values().end());
  }
  EXPECT_EQ(encodings.size(), 362880u);
  EXPECT_EQ(enumerate_states(true).size(), 181440u);
}

TEST(Puzzle, SampleStatesDistinctAndDeterministic) {
  const auto a = sample_states(5000, 1);
  const auto b = sample_states(5000, 1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::set(a.begin(), a.end()).size(), 5000u);
  EXPECT_NE(a, sample_states(5000, 2));
  EXPECT_TRUE(is_valid(sample_states(1, 77).front()));
  for (const PuzzleState& s : sample_states(300, 5, true)) EXPECT_TRUE(is_solvable(s));
  EXPECT_THROW(sample_states(362881, 0), std::invalid_argument);
  EXPECT_EQ(sample_states(200000, 3).size(), 200000u);
}

TEST(Padding, CounterPatternForFiveFeatures) {
  const Matrix x(3, 5);
  const Matrix padded = pad_with_dummies(x, 5).values();
  ASSERT_EQ(padded.cols(), 6u);
  EXPECT_EQ(padded_bits(padded.row(3)), "100000");
  EXPECT_EQ(padded_bits(padded.row(4)), "100001");
}

TEST(Padding, EmptySetEnumeratesCounter) {
  const Matrix padded = pad_with_dummies(Matrix(0, 2), 3).values();
  ASSERT_EQ(padded.rows(), 3u);
  EXPECT_EQ(padded_bits(padded.row(0)), "100");
  EXPECT_EQ(padded_bits(padded.row(1)), "101");
  EXPECT_EQ(padded_bits(padded.row(2)), "110");
}

TEST(Padding, FullSetGetsZeroFlag) {
  const Matrix x = encode_puzzle_state(solved_state()).values();
  const Matrix padded = pad_with_dummies(x, 9).values();
  for (std::size_t r = 0; r < 9; ++r) {
    EXPECT_EQ(padded(r, 15), 0.0);
    for (std::size_t c = 0; c < 15; ++c) EXPECT_EQ(padded(r, c), x(r, c));
  }
}

TEST(Padding, Errors) {
  EXPECT_THROW(pad_with_dummies(Matrix(4, 2), 3), std::invalid_argument);
  try {
    pad_with_dummies(Matrix(0, 2), 5);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "dummy space exhausted");
  }
}

TEST(Padding, InjectiveOnVariableSizeSets) {
  // Sets of 0..2 rows over 2-bit binary vectors, in order.
  std::vector<Matrix> sets = {Matrix(0, 2)};
  for (int a = 0; a < 4; ++a) {
    sets.push_back(Matrix{{double(a >> 1), double(a & 1)}});
    for (int b = 0; b < 4; ++b)
      if (a != b) sets.push_back(Matrix{{double(a >> 1), double(a & 1)}, {double(b >> 1), double(b & 1)}});
  }
  std::set<std::vector<double>> images;
  for (const Matrix& s : sets) {
    const Matrix p = pad_with_dummies(s, 3).values();
    EXPECT_TRUE(rows_distinct(p));
    images.emplace(p.values().begin(), p.values().end());
  }
  EXPECT_EQ(images.size(), sets.size());
}

TEST(Drop, BucketSizes) {
  std::vector<Matrix> sets;
  for (const PuzzleState& s : sample_states(5000, 2)) sets.push_back(encode_puzzle_state(s).values());
  const std::vector<Matrix> dropped = drop_elements(sets, 8);
  std::map<std::size_t, std::size_t> sizes;
  for (const Matrix& m : dropped) ++sizes[m.rows()];
  EXPECT_NEAR(static_cast<double>(sizes[9]), 2500.0, 100.0);
  EXPECT_EQ(sizes[9], 2500u);
  EXPECT_EQ(sizes[8], 1250u);
  EXPECT_EQ(sizes[7], 625u);
  EXPECT_EQ(sizes[6], 313u);
  EXPECT_EQ(sizes[5], 312u);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    EXPECT_TRUE(rows_distinct(dropped[i]));
    const auto original = row_multiset(sets[i]);
    for (const auto& row : row_multiset(dropped[i])) EXPECT_TRUE(original.contains(row));
    const Matrix padded = pad_with_dummies(dropped[i], 9).values();
    EXPECT_EQ(padded.rows(), 9u);
    EXPECT_EQ(padded.cols(), 16u);
    EXPECT_TRUE(rows_distinct(padded));
  }
  EXPECT_EQ(drop_elements(sets, 8), dropped);
}

TEST(Scenario, NumberedConfigs) {
  for (int k = 1; k <= 4; ++k) {
    const ScenarioConfig c = ScenarioConfig::numbered(k, 0);
    EXPECT_EQ(c.repetition, k == 1 ? 1u : 5u);
    EXPECT_EQ(c.epochs(30), k == 1 ? 30u : 6u);
  }
  EXPECT_THROW(ScenarioConfig::numbered(5, 0), std::invalid_argument);
  ScenarioConfig bad;
  bad.repetition = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.repetition = 0;
  bad.target_order = Order::kRandom;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Scenario, PairsAreMultisetEqual) {
  std::vector<Matrix> sets;
  for (const PuzzleState& s : sample_states(50, 3)) sets.push_back(encode_puzzle_state(s).values());
  for (int k = 1; k <= 4; ++k) {
    const auto ex = make_scenario(sets, ScenarioConfig::numbered(k, 11));
    ASSERT_EQ(ex.size(), sets.size() * (k == 1 ? 1 : 5));
    std::size_t reordered_targets = 0, reordered_inputs = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const Matrix& original = sets[i % sets.size()];
      EXPECT_EQ(row_multiset(ex.inputs[i]), row_multiset(ex.targets[i]));
      EXPECT_EQ(row_multiset(ex.inputs[i]), row_multiset(original));
      reordered_inputs += ex.inputs[i] != original;
      reordered_targets += ex.targets[i] != original;
    }
    if (k == 1) {
      EXPECT_EQ(ex.inputs, ex.targets);
    }
    EXPECT_EQ(reordered_inputs > 0, k == 2 || k == 4);
    EXPECT_EQ(reordered_targets > 0, k == 3 || k == 4);
    if (k == 3) {
      EXPECT_EQ(reordered_targets, ex.size());
    }
  }
}

TEST(EdgeList, ParsesAndDeduplicates) {
  std::istringstream in("# borders\naustria germany\n\ngermany belgium  # west\ngermany austria\n");
  const KnowledgeGraph g = parse_edge_list(in);
  EXPECT_EQ(g.size(), 3u);
  EXPECT_EQ(g.edge_count(), 2u);
  EXPECT_EQ(g.name(0), "austria");
  EXPECT_TRUE(g.has_edge(1, 0));
  EXPECT_TRUE(g.has_edge(0, 1));
}

TEST(EdgeList, ErrorsCarryLineNumbers) {
  std::istringstream one("a b\nlonely\n");
  try {
    parse_edge_list(one, "f.txt");
    FAIL();
  } catch (const setloss::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("f.txt:2"), std::string::npos);
  }
  std::istringstream loop("a b\nc c\n");
  EXPECT_THROW(parse_edge_list(loop), setloss::DataError);
  std::istringstream extra("a b c\n");
  EXPECT_THROW(parse_edge_list(extra), setloss::DataError);
  EXPECT_THROW(load_edge_list("/nonexistent/edges.txt"), setloss::DataError);
}

TEST(EdgeList, SyntheticGraphRoundTrip) {
  const KnowledgeGraph g = synthetic_geographic_graph();
  EXPECT_EQ(g.size(), 163u);
  std::ostringstream out;
  g.write_edge_list(out);
  std::istringstream in(out.str());
  const KnowledgeGraph back = parse_edge_list(in);
  EXPECT_EQ(back.size(), 163u);
  EXPECT_EQ(back.edge_count(), g.edge_count());
}

TEST(Clauses, ThreeCountryPath) {
  std::istringstream in("austria germany\ngermany belgium\n");
  const KnowledgeGraph g = parse_edge_list(in);
  const auto clauses = enumerate_clauses(g, 2);
  ASSERT_EQ(clauses.size(), 2u);
  const ClauseExample& c = clauses.front();  // austria germany belgium
  EXPECT_EQ(c.entities, (std::vector<std::size_t>{0, 1, 2}));
  const auto terms = c.terms();
  EXPECT_EQ(terms[0], (Term{kNeighborOf, 0, 1}));
  EXPECT_EQ(terms[1], (Term{kNeighborOf, 1, 2}));
  EXPECT_EQ(c.head.cols(), 2u + 3 * 3);
  EXPECT_EQ(c.body.rows(), 2u);
  EXPECT_EQ(c.body.cols(), 2u + 2 * 3);
  EXPECT_EQ(clauses.back().entities, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Clauses, LayoutOnSyntheticGraph) {
  const KnowledgeGraph g = synthetic_geographic_graph();
  const auto clauses = enumerate_clauses(g, 2);
  ASSERT_FALSE(clauses.empty());
  const ClauseExample& c = clauses.front();
  EXPECT_EQ(c.head.cols(), 2u + 163 * 3);
  EXPECT_EQ(c.body.cols(), 328u);
  std::set<std::vector<std::size_t>> heads;
  for (const ClauseExample& e : clauses) {
    heads.insert(e.entities);
    double head_sum = 0;
    for (double v : e.head.values()) head_sum += v;
    EXPECT_EQ(head_sum, 4.0);
    for (std::size_t k = 0; k < e.n; ++k) {
      EXPECT_EQ(decode_term(e.body.row(k), g.size()), e.terms()[k]);
      EXPECT_TRUE(g.has_edge(e.entities[k], e.entities[k + 1]));
      double s = 0;
      for (double v : e.body.row(k)) s += v;
      EXPECT_EQ(s, 3.0);
    }
  }
  EXPECT_EQ(heads.size(), clauses.size());
}

TEST(Clauses, MatchBruteForceOnSmallGraphs) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t nodes = 5 + seed;  // up to 16
    const KnowledgeGraph g = random_graph(nodes, 0.3, seed);
    for (std::size_t n = 2; n <= 3; ++n) {
      EXPECT_EQ(enumerate_clauses(g, n).size(), brute_force_walks(g, n)) << "nodes=" << nodes << " n=" << n;
    }
  }
  // 20 nodes at n = 2 stays within the odometer budget.
  const KnowledgeGraph g20 = random_graph(20, 0.25, 99);
  EXPECT_EQ(enumerate_clauses(g20, 2).size(), brute_force_walks(g20, 2));
}

TEST(Clauses, PathGraphBothDirections) {
  std::istringstream in("a b\nb c\n");
  const auto clauses = enumerate_clauses(parse_edge_list(in), 2);
  std::set<std::vector<std::size_t>> walks;
  for (const auto& c : clauses) walks.insert(c.entities);
  EXPECT_TRUE(walks.contains({0, 1, 2}));
  EXPECT_TRUE(walks.contains({2, 1, 0}));
}

TEST(Clauses, Errors) {
  EXPECT_THROW(enumerate_clauses(KnowledgeGraph{}, 2), std::invalid_argument);
  const KnowledgeGraph g = synthetic_geographic_graph(10, 1);
  EXPECT_THROW(enumerate_clauses(g, 1), std::invalid_argument);
}

TEST(Clauses, BodyOrdersAndRuleExamples) {
  const auto g = synthetic_geographic_graph(30, 5, 4.0);
  auto clauses = sample_clauses(enumerate_clauses(g, 3), 40, 9);
  ASSERT_EQ(clauses.size(), 40u);
  const auto chain = clauses;
  order_bodies(clauses, BodyOrder::kArbitrary, 3);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    EXPECT_EQ(row_multiset(clauses[i].body), row_multiset(chain[i].body));
    moved += !(clauses[i].body == chain[i].body);
  }
  EXPECT_GT(moved, 0u);
  order_bodies(clauses, BodyOrder::kChain, 0);
  for (std::size_t i = 0; i < clauses.size(); ++i) EXPECT_EQ(clauses[i].body, chain[i].body);

  const auto fixed = make_rule_examples(clauses, rule_scenario(Order::kFixed, 1));
  ASSERT_EQ(fixed.size(), 40u);
  EXPECT_EQ(fixed.targets[7], clauses[7].body);
  const auto random = make_rule_examples(clauses, rule_scenario(Order::kRandom, 1));
  ASSERT_EQ(random.size(), 200u);
  EXPECT_EQ(random.inputs[47], clauses[7].head);
  EXPECT_EQ(row_multiset(random.targets[47]), row_multiset(clauses[7].body));
  EXPECT_THROW(make_rule_examples(clauses, ScenarioConfig::numbered(2, 1)), std::invalid_argument);
  EXPECT_THROW(sample_clauses(chain, 41, 0), std::invalid_argument);
}

TEST(Setd, RoundTripAndDeterministicBytes) {
  std::vector<Matrix> sets;
  for (const PuzzleState& s : sample_states(20, 6)) sets.push_back(encode_puzzle_state(s).values());
  const SetDataset d = make_dataset(sets);
  std::ostringstream a, b;
  write_setd(a, d);
  write_setd(b, make_dataset(sets));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().size(), 20u + 20 * 9 * 15 * 4);
  std::istringstream in(a.str());
  const SetDataset back = read_setd(in);
  EXPECT_EQ(back.n, 9u);
  EXPECT_EQ(back.f, 15u);
  EXPECT_EQ(back.sets, sets);
}

TEST(Setd, MalformedInputs) {
  std::istringstream magic("SETX\x01\0\0\0");
  EXPECT_THROW(read_setd(magic), setloss::DataError);
  std::ostringstream out;
  write_setd(out, make_dataset({Matrix(2, 2)}));
  std::istringstream truncated(out.str().substr(0, out.str().size() - 3));
  EXPECT_THROW(read_setd(truncated), setloss::DataError);
  EXPECT_THROW(make_dataset({Matrix(2, 2), Matrix(3, 2)}), std::invalid_argument);
}

TEST(Setd, CsvLayout) {
  const SetDataset d = make_dataset({Matrix{{0, 1}, {1, 0}}, Matrix{{1, 1}, {0, 0}}});
  std::ostringstream out;
  write_csv(out, d);
  EXPECT_EQ(out.str(), "0,1\n1,0\n\n1,1\n0,0\n");
}

TEST(Split, TrailingTestPortion) {
  std::vector<Matrix> sets;
  for (int i = 0; i < 10; ++i) sets.push_back(Matrix{{double(i)}});
  const auto [train, test] = split(sets, 0.1);
  ASSERT_EQ(train.size(), 9u);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test.front()(0, 0), 9.0);
  EXPECT_THROW(split(sets, 1.0), std::invalid_argument);
}

}  // namespace
