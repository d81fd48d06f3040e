#pragma once

// 8-puzzle object sets, dummy padding, permutation scenarios, n-hop clause
// datasets over a knowledge graph, and the SETD container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "setloss/checkpoint.hpp"
#include "setloss/losses.hpp"
#include "setloss/matrix.hpp"
#include "setloss/nets.hpp"
#include "setloss/segments.hpp"

namespace setloss::data {

// ---------------------------------------------------------------------------
// 8-puzzle.

inline constexpr std::size_t kTiles = 9;
inline constexpr std::size_t kPuzzleFeatures = 15;
inline constexpr std::uint32_t kPuzzleStates = 362880;  // 9!

/// tile_at[position], positions row-major on the 3x3 grid; tile 0 is the blank.
using PuzzleState = std::array<std::uint8_t, kTiles>;

inline PuzzleState solved_state() {
  PuzzleState s;
  std::iota(s.begin(), s.end(), std::uint8_t{0});
  return s;
}

inline bool is_valid(const PuzzleState& s) {
  std::array<bool, kTiles> seen{};
  for (std::uint8_t t : s) {
    if (t >= kTiles || seen[t]) return false;
    seen[t] = true;
  }
  return true;
}

/// Even inversion count over the non-blank tiles.
inline bool is_solvable(const PuzzleState& s) {
  int inversions = 0;
  for (std::size_t i = 0; i < kTiles; ++i)
    for (std::size_t j = i + 1; j < kTiles; ++j)
      if (s[i] && s[j] && s[i] > s[j]) ++inversions;
  return inversions % 2 == 0;
}

/// Lexicographic rank in [0, 9!).
inline std::uint32_t rank_state(const PuzzleState& s) {
  std::uint32_t rank = 0;
  for (std::size_t i = 0; i < kTiles; ++i) {
    std::uint32_t smaller = 0;
    for (std::size_t j = i + 1; j < kTiles; ++j)
      if (s[j] < s[i]) ++smaller;
    std::uint32_t fact = 1;
    for (std::size_t k = 2; k < kTiles - i; ++k) fact *= static_cast<std::uint32_t>(k);
    rank += smaller * fact;
  }
  return rank;
}

inline PuzzleState unrank_state(std::uint32_t rank) {
  if (rank >= kPuzzleStates) throw std::out_of_range("unrank_state: rank out of range");
  std::vector<std::uint8_t> pool(kTiles);
  std::iota(pool.begin(), pool.end(), std::uint8_t{0});
  PuzzleState s{};
  for (std::size_t i = 0; i < kTiles; ++i) {
    std::uint32_t fact = 1;
    for (std::size_t k = 2; k < kTiles - i; ++k) fact *= static_cast<std::uint32_t>(k);
    const std::uint32_t idx = rank / fact;
    rank %= fact;
    s[i] = pool[idx];
    pool.erase(pool.begin() + idx);
  }
  return s;
}

/// Column layout: 9 tile id, 3 x, 3 y.
inline SegmentPlan puzzle_segments() {
  return {{9, Activation::kSoftmax}, {3, Activation::kSoftmax}, {3, Activation::kSoftmax}};
}

/// One row per tile (row t describes tile t): one-hot tile id, one-hot x, one-hot y.
inline ObjectSet encode_puzzle_state(const PuzzleState& s) {
  if (!is_valid(s)) throw std::invalid_argument("encode_puzzle_state: not a permutation of 0..8");
  Matrix m(kTiles, kPuzzleFeatures);
  for (std::size_t pos = 0; pos < kTiles; ++pos) {
    const std::size_t t = s[pos];
    m(t, t) = 1.0;
    m(t, 9 + pos % 3) = 1.0;
    m(t, 12 + pos / 3) = 1.0;
  }
  return ObjectSet(std::move(m));
}

/// All 9! states in rank order (only solvable ones when requested).
inline std::vector<PuzzleState> enumerate_states(bool solvable_only = false) {
  std::vector<PuzzleState> out;
  PuzzleState s = solved_state();
  do {
    if (!solvable_only || is_solvable(s)) out.push_back(s);
  } while (std::next_permutation(s.begin(), s.end()));
  return out;
}

/// `count` distinct states drawn uniformly without replacement.
inline std::vector<PuzzleState> sample_states(std::size_t count, std::uint64_t seed, bool solvable_only = false) {
  const std::size_t space = solvable_only ? kPuzzleStates / 2 : kPuzzleStates;
  if (count > space) {
    throw std::invalid_argument("sample_states: " + std::to_string(count) + " exceeds the " +
                                std::to_string(space) + " available states");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, kPuzzleStates - 1);
  std::unordered_set<std::uint32_t> taken;
  std::vector<PuzzleState> out;
  out.reserve(count);
  if (count > space / 2) {
    std::vector<PuzzleState> all = enumerate_states(solvable_only);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    return all;
  }
  while (out.size() < count) {
    const std::uint32_t r = pick(rng);
    const PuzzleState s = unrank_state(r);
    if (solvable_only && !is_solvable(s)) continue;
    if (taken.insert(r).second) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variable-size sets.

/// Appends a flag column: 0 for the k real rows, 1 for N - k dummies whose
/// first F columns hold a binary counter (most significant bit first).
inline ObjectSet pad_with_dummies(const Matrix& x, std::size_t n) {
  const std::size_t k = x.rows(), f = x.cols();
  if (k > n) {
    throw std::invalid_argument("pad_with_dummies: " + std::to_string(k) + " rows exceed target size " +
                                std::to_string(n));
  }
  const std::size_t dummies = n - k;
  if (f < 64 && dummies > (std::uint64_t{1} << f)) throw std::invalid_argument("dummy space exhausted");
  Matrix out(n, f + 1);
  for (std::size_t r = 0; r < k; ++r) std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin());
  for (std::size_t d = 0; d < dummies; ++d) {
    for (std::size_t b = 0; b < f; ++b) out(k + d, b) = static_cast<double>((d >> (f - 1 - b)) & 1u);
    out(k + d, f) = 1.0;
  }
  return ObjectSet(std::move(out));
}

/// Bit string of a padded row with the flag first.
inline std::string padded_bits(std::span<const double> row) {
  std::string s;
  s.push_back(row.back() >= 0.5 ? '1' : '0');
  for (std::size_t b = 0; b + 1 < row.size(); ++b) s.push_back(row[b] >= 0.5 ? '1' : '0');
  return s;
}

/// Keeps 9, 8, 7, 6 rows in 1/2, 1/4, 1/8, 1/16 of the sets and 5 rows in
/// the remainder. Bucket sizes are exact quotas; which sets land in which
/// bucket and which rows are dropped is random. Kept rows retain their order.
inline std::vector<Matrix> drop_elements(const std::vector<Matrix>& sets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t count = sets.size();
  std::vector<std::size_t> drop(count, 4);
  std::size_t filled = 0;
  double share = 0.5;
  for (std::size_t d = 0; d < 4; ++d, share /= 2) {
    const auto quota = static_cast<std::size_t>(std::llround(share * static_cast<double>(count)));
    for (std::size_t i = 0; i < quota && filled < count; ++i) drop[filled++] = d;
  }
  std::shuffle(drop.begin(), drop.end(), rng);
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const Matrix& x = sets[s];
    const std::size_t keep = x.rows() > drop[s] ? x.rows() - drop[s] : 0;
    std::vector<std::size_t> rows(x.rows());
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(keep);
    std::sort(rows.begin(), rows.end());
    Matrix kept(keep, x.cols());
    for (std::size_t r = 0; r < keep; ++r) std::copy(x.row(rows[r]).begin(), x.row(rows[r]).end(), kept.row(r).begin());
    out.push_back(std::move(kept));
  }
  return out;
}

/// Plan for padded puzzle sets: dummy counters are not one-hot, so every
/// feature is an independent sigmoid.
inline SegmentPlan padded_puzzle_segments() { return {{kPuzzleFeatures + 1, Activation::kSigmoid}}; }

// ---------------------------------------------------------------------------
// Scenarios.

enum class Order { kFixed, kRandom };

struct ScenarioConfig {
  Order input_order = Order::kFixed;
  Order target_order = Order::kFixed;
  std::size_t repetition = 1;
  std::uint64_t seed = 0;

  /// Scenarios 1-4: (fixed, fixed), (random, fixed), (fixed, random), (random, random).
  static ScenarioConfig numbered(int scenario, std::uint64_t seed) {
    if (scenario < 1 || scenario > 4) {
      throw std::invalid_argument("scenario must be 1..4, got " + std::to_string(scenario));
    }
    ScenarioConfig c;
    c.input_order = scenario == 2 || scenario == 4 ? Order::kRandom : Order::kFixed;
    c.target_order = scenario >= 3 ? Order::kRandom : Order::kFixed;
    c.repetition = scenario == 1 ? 1 : 5;
    c.seed = seed;
    return c;
  }

  bool shuffles() const { return input_order == Order::kRandom || target_order == Order::kRandom; }

  void validate() const {
    if (repetition == 0) throw std::invalid_argument("ScenarioConfig: repetition must be >= 1");
    if (!shuffles() && repetition != 1) throw std::invalid_argument("ScenarioConfig: fixed orders need repetition 1");
  }

  /// Epoch budget compensating for the repeated data.
  std::size_t epochs(std::size_t base) const { return std::max<std::size_t>(1, base / repetition); }
};

inline Matrix shuffle_rows(const Matrix& m, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(m.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), out.row(r).begin());
  return out;
}

/// (input, target) pairs: each set repeated `repetition` times with rows
/// independently shuffled on the randomized side(s).
inline nets::Examples make_scenario(const std::vector<Matrix>& sets, const ScenarioConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  nets::Examples out;
  out.inputs.reserve(sets.size() * cfg.repetition);
  out.targets.reserve(sets.size() * cfg.repetition);
  for (std::size_t rep = 0; rep < cfg.repetition; ++rep) {
    for (const Matrix& s : sets) {
      out.inputs.push_back(cfg.input_order == Order::kRandom ? shuffle_rows(s, rng) : s);
      out.targets.push_back(cfg.target_order == Order::kRandom ? shuffle_rows(s, rng) : s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Knowledge graph and clauses.

class KnowledgeGraph {
 public:
  std::size_t entity(const std::string& name) {
    const auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    names_.push_back(name);
    adjacency_.emplace_back();
    return ids_[name] = names_.size() - 1;
  }

  void add_edge(std::size_t a, std::size_t b) {
    if (a == b) throw std::invalid_argument("self-loop on " + names_.at(a));
    adjacency_.at(a).insert(b);
    adjacency_.at(b).insert(a);
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::set<std::size_t>& neighbors(std::size_t id) const { return adjacency_.at(id); }
  bool has_edge(std::size_t a, std::size_t b) const { return adjacency_.at(a).contains(b); }

  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (const auto& n : adjacency_) twice += n.size();
    return twice / 2;
  }

  /// One "a b" line per undirected edge, a < b by id.
  void write_edge_list(std::ostream& out) const {
    for (std::size_t a = 0; a < size(); ++a)
      for (std::size_t b : adjacency_[a])
        if (a < b) out << names_[a] << ' ' << names_[b] << '\n';
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> ids_;
  std::vector<std::set<std::size_t>> adjacency_;
};

/// Parses "entityA entityB" lines; '#' starts a comment, blank lines are skipped.
inline KnowledgeGraph parse_edge_list(std::istream& in, const std::string& source = "<input>") {
  KnowledgeGraph g;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string a, b, extra;
    if (!(fields >> a)) continue;
    if (!(fields >> b) || (fields >> extra)) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected two entity names");
    }
    if (a == b) throw DataError(source + ":" + std::to_string(lineno) + ": self-loop on " + a);
    const std::size_t ia = g.entity(a);
    g.add_edge(ia, g.entity(b));
  }
  return g;
}

inline KnowledgeGraph load_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list " + path.string());
  return parse_edge_list(in, path.string());
}

/// Random geometric graph: `n` points in the unit square, joined by the
/// `n * mean_degree / 2` shortest pairwise links.
inline KnowledgeGraph synthetic_geographic_graph(std::size_t n = 163, std::uint64_t seed = 163,
                                                 double mean_degree = 4.4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, double>> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pairs;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double dx = pts[a].first - pts[b].first, dy = pts[a].second - pts[b].second;
      pairs.push_back({dx * dx + dy * dy, {a, b}});
    }
  std::sort(pairs.begin(), pairs.end());
  KnowledgeGraph g;
  char name[24];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof name, "c%03zu", i);
    g.entity(name);
  }
  const auto edges = std::min(pairs.size(), static_cast<std::size_t>(std::llround(n * mean_degree / 2.0)));
  for (std::size_t e = 0; e < edges; ++e) g.add_edge(pairs[e].second.first, pairs[e].second.second);
  return g;
}

inline constexpr std::size_t kPredicates = 2;  // one-hot predicate block width
inline constexpr std::size_t kNeighborOf = 0;  // body predicate index
inline constexpr std::size_t kNeighborN = 0;   // head predicate index

struct Term {
  std::size_t predicate = kNeighborOf;
  std::size_t arg0 = 0;
  std::size_t arg1 = 0;

  friend auto operator<=>(const Term&, const Term&) = default;
};

/// neighborN(e_0, ..., e_n) :- neighborOf(e_0, e_1), ..., neighborOf(e_{n-1}, e_n).
/// Body row k is neighborOf(e_k, e_{k+1}).
struct ClauseExample {
  std::size_t n = 0;
  std::vector<std::size_t> entities;
  Matrix head;  // 1 x (2 + E (n + 1))
  Matrix body;  // n x (2 + 2 E)

  std::vector<Term> terms() const {
    std::vector<Term> t;
    for (std::size_t k = 0; k < n; ++k) t.push_back({kNeighborOf, entities[k], entities[k + 1]});
    return t;
  }
};

inline std::size_t head_width(std::size_t n, std::size_t entities) { return kPredicates + entities * (n + 1); }
inline std::size_t term_width(std::size_t entities) { return kPredicates + 2 * entities; }

inline void encode_term(const Term& t, std::size_t entities, std::span<double> row) {
  std::fill(row.begin(), row.end(), 0.0);
  row[t.predicate] = 1.0;
  row[kPredicates + t.arg0] = 1.0;
  row[kPredicates + entities + t.arg1] = 1.0;
}

/// Argmax of each one-hot block (lowest index on ties).
inline Term decode_term(std::span<const double> row, std::size_t entities) {
  const auto argmax = [&](std::size_t from, std::size_t len) {
    return static_cast<std::size_t>(std::max_element(row.begin() + from, row.begin() + from + len) -
                                    (row.begin() + from));
  };
  return {argmax(0, kPredicates), argmax(kPredicates, entities), argmax(kPredicates + entities, entities)};
}

inline ClauseExample make_clause(std::vector<std::size_t> walk, std::size_t entities) {
  ClauseExample c;
  c.n = walk.size() - 1;
  c.entities = std::move(walk);
  c.head = Matrix(1, head_width(c.n, entities));
  c.head[kNeighborN] = 1.0;
  for (std::size_t k = 0; k <= c.n; ++k) c.head[kPredicates + k * entities + c.entities[k]] = 1.0;
  c.body = Matrix(c.n, term_width(entities));
  const std::vector<Term> terms = c.terms();
  for (std::size_t k = 0; k < c.n; ++k) encode_term(terms[k], entities, c.body.row(k));
  return c;
}

/// Every simple walk e_0 ... e_n, in lexicographic order of entity ids.
inline std::vector<ClauseExample> enumerate_clauses(const KnowledgeGraph& g, std::size_t n) {
  if (n < 2) throw std::invalid_argument("enumerate_clauses: n must be >= 2");
  if (g.size() == 0) throw std::invalid_argument("enumerate_clauses: graph is empty");
  std::vector<ClauseExample> out;
  std::vector<std::size_t> walk;
  std::vector<bool> on_walk(g.size(), false);
  const auto extend = [&](auto&& self) -> void {
    if (walk.size() == n + 1) {
      out.push_back(make_clause(walk, g.size()));
      return;
    }
    for (std::size_t next : g.neighbors(walk.back())) {
      if (on_walk[next]) continue;
      on_walk[next] = true;
      walk.push_back(next);
      self(self);
      walk.pop_back();
      on_walk[next] = false;
    }
  };
  for (std::size_t start = 0; start < g.size(); ++start) {
    walk.assign(1, start);
    on_walk[start] = true;
    extend(extend);
    on_walk[start] = false;
  }
  return out;
}

/// Seeded subset of `count` clauses in shuffled order.
inline std::vector<ClauseExample> sample_clauses(std::vector<ClauseExample> clauses, std::size_t count,
                                                 std::uint64_t seed) {
  if (count > clauses.size()) {
    throw std::invalid_argument("requested " + std::to_string(count) + " clauses, only " +
                                std::to_string(clauses.size()) + " exist");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(clauses.begin(), clauses.end(), rng);
  clauses.resize(count);
  return clauses;
}

enum class BodyOrder { kChain, kArbitrary };

/// Stored body order of every clause. kArbitrary applies one seeded row
/// permutation per clause.
inline void order_bodies(std::vector<ClauseExample>& clauses, BodyOrder order, std::uint64_t seed) {
  if (order == BodyOrder::kChain) {
    for (ClauseExample& c : clauses) {
      const std::vector<Term> terms = c.terms();
      const std::size_t entities = (c.body.cols() - kPredicates) / 2;
      for (std::size_t k = 0; k < c.n; ++k) encode_term(terms[k], entities, c.body.row(k));
    }
    return;
  }
  std::mt19937_64 rng(seed);
  for (ClauseExample& c : clauses) c.body = shuffle_rows(c.body, rng);
}

/// (head, body) pairs. Random target order repeats the data
/// cfg.repetition times with freshly shuffled bodies.
inline nets::Examples make_rule_examples(const std::vector<ClauseExample>& clauses, const ScenarioConfig& cfg) {
  cfg.validate();
  if (cfg.input_order != Order::kFixed) throw std::invalid_argument("rule heads have no row order to shuffle");
  std::mt19937_64 rng(cfg.seed);
  nets::Examples out;
  for (std::size_t rep = 0; rep < cfg.repetition; ++rep) {
    for (const ClauseExample& c : clauses) {
      out.inputs.push_back(c.head);
      out.targets.push_back(cfg.target_order == Order::kRandom ? shuffle_rows(c.body, rng) : c.body);
    }
  }
  return out;
}

/// Fixed (1) or randomized (3) body order.
inline ScenarioConfig rule_scenario(Order target_order, std::uint64_t seed) {
  return ScenarioConfig::numbered(target_order == Order::kFixed ? 1 : 3, seed);
}

// ---------------------------------------------------------------------------
// SETD container and CSV export.
//
//   "SETD" | version u32 | count u32 | N u32 | F u32 | count*N*F f32, little-endian

inline constexpr std::uint32_t kDatasetVersion = 1;

struct SetDataset {
  std::size_t n = 0;
  std::size_t f = 0;
  std::vector<Matrix> sets;

  std::size_t size() const noexcept { return sets.size(); }
};

inline SetDataset make_dataset(std::vector<Matrix> sets) {
  SetDataset d;
  if (!sets.empty()) {
    d.n = sets.front().rows();
    d.f = sets.front().cols();
  }
  for (const Matrix& s : sets) {
    if (s.rows() != d.n || s.cols() != d.f) throw std::invalid_argument("SetDataset: sets differ in shape");
  }
  d.sets = std::move(sets);
  return d;
}

inline void write_setd(std::ostream& out, const SetDataset& d) {
  out.write("SETD", 4);
  io::put_u32(out, kDatasetVersion);
  io::put_u32(out, static_cast<std::uint32_t>(d.size()));
  io::put_u32(out, static_cast<std::uint32_t>(d.n));
  io::put_u32(out, static_cast<std::uint32_t>(d.f));
  for (const Matrix& s : d.sets)
    for (double v : s.values()) io::put_f32(out, static_cast<float>(v));
}

inline SetDataset read_setd(std::istream& in) {
  const std::string what = "SETD";
  io::expect_magic(in, "SETD", what);
  const std::uint32_t version = io::get_u32(in, what);
  if (version != kDatasetVersion) throw DataError("SETD: unsupported version " + std::to_string(version));
  SetDataset d;
  const std::uint32_t count = io::get_u32(in, what);
  d.n = io::get_u32(in, what);
  d.f = io::get_u32(in, what);
  d.sets.reserve(count);
  for (std::uint32_t s = 0; s < count; ++s) {
    Matrix m(d.n, d.f);
    for (double& v : m.values()) v = io::get_f32(in, what);
    d.sets.push_back(std::move(m));
  }
  return d;
}

inline void save_setd(const std::filesystem::path& path, const SetDataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_setd(out, d);
}

inline SetDataset load_setd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_setd(in);
}

/// One line per element, a blank line between sets.
inline void write_csv(std::ostream& out, const SetDataset& d) {
  for (std::size_t s = 0; s < d.size(); ++s) {
    if (s) out << '\n';
    for (std::size_t r = 0; r < d.n; ++r) {
      for (std::size_t c = 0; c < d.f; ++c) {
        if (c) out << ',';
        out << d.sets[s](r, c);
      }
      out << '\n';
    }
  }
}

/// Training portion (leading sets) and test portion (trailing
/// round(test_fraction * count) sets).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& sets, double test_fraction) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw std::invalid_argument("test fraction must be in [0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(sets.size())));
  const auto mid = sets.begin() + static_cast<std::ptrdiff_t>(sets.size() - n_test);
  return {std::vector<T>(sets.begin(), mid), std::vector<T>(mid, sets.end())};
}

}  // namespace setloss::data
