#pragma once

// Task presets, dataset assembly, single training runs, and loss x scenario
// grids shared by the command-line tool and the acceptance checks.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "setloss/datasets.hpp"
#include "setloss/losses.hpp"
#include "setloss/metrics.hpp"
#include "setloss/nets.hpp"

namespace setloss::experiments {

enum class Task { kPuzzle, kPuzzleVariable, kRules };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kPuzzle: return "puzzle";
    case Task::kPuzzleVariable: return "puzzle-variable";
    case Task::kRules: return "rules";
  }
  return "unknown";
}

inline std::optional<Task> parse_task(std::string_view s) {
  for (Task t : {Task::kPuzzle, Task::kPuzzleVariable, Task::kRules})
    if (task_name(t) == s) return t;
  return std::nullopt;
}

struct Config {
  Task task = Task::kPuzzle;
  /// Puzzle tasks: 1-4. Rules: 1 (fixed body order) or 3 (shuffled bodies).
  int scenario = 1;
  /// Run seed: initialization, batching, noise, and scenario shuffles.
  std::uint64_t seed = 0;
  /// Dataset sampling; shared by every run of a grid.
  std::uint64_t data_seed = 1;
  std::size_t train_size = 500;
  std::size_t test_size = 56;
  std::size_t hops = 2;
  data::BodyOrder body_order = data::BodyOrder::kArbitrary;
  /// Edge list for the rules task; empty selects the synthetic graph.
  std::string edges;
  nets::TrainConfig train;

  const nets::ArchConfig& arch() const { return train.arch; }
  nets::ArchConfig& arch() { return train.arch; }
};

/// Desk-scale presets; `paper_scale` widens the networks and datasets.
inline Config preset(Task task, bool paper_scale = false) {
  Config c;
  c.task = task;
  nets::ArchConfig& a = c.arch();
  if (task == Task::kRules) {
    a.width = 400;
    a.dropout = 0.5;
    a.output_row_bias = 0.0;
    c.train_size = paper_scale ? 2250 : 2000;
    c.test_size = paper_scale ? 250 : 222;
  } else {
    a.width = paper_scale ? 1000 : 300;
    a.latent_mode = nets::LatentMode::kSigmoid;
    a.dropout = 0.0;
    a.output_row_bias = 2.0;
    c.train_size = paper_scale ? 4500 : 500;
    c.test_size = paper_scale ? 500 : 56;
  }
  return c;
}

/// The split reported in grids: the whole dataset for puzzles, held-out
/// clauses for rules.
inline std::string_view headline_split(Task t) { return t == Task::kRules ? "test" : "all"; }

// ---------------------------------------------------------------------------
// Data.

struct Data {
  Task task = Task::kPuzzle;
  std::vector<Matrix> train, test;  // puzzle tasks
  std::vector<data::ClauseExample> train_clauses, test_clauses;
  std::size_t entities = 0;
};

inline std::size_t set_size(Task) { return data::kTiles; }

inline std::size_t feature_count(Task t) {
  return t == Task::kPuzzleVariable ? data::kPuzzleFeatures + 1 : data::kPuzzleFeatures;
}

inline SegmentPlan segment_plan(Task t) {
  return t == Task::kPuzzleVariable ? data::padded_puzzle_segments() : data::puzzle_segments();
}

/// All sets of a puzzle task, train first.
inline std::vector<Matrix> puzzle_sets(Task task, std::size_t count, std::uint64_t seed) {
  std::vector<Matrix> sets;
  sets.reserve(count);
  for (const data::PuzzleState& s : data::sample_states(count, seed)) {
    sets.push_back(data::encode_puzzle_state(s).values());
  }
  if (task == Task::kPuzzleVariable) {
    sets = data::drop_elements(sets, seed);
    for (Matrix& m : sets) m = data::pad_with_dummies(m, data::kTiles).values();
  }
  return sets;
}

inline data::KnowledgeGraph rules_graph(const Config& c) {
  return c.edges.empty() ? data::synthetic_geographic_graph() : data::load_edge_list(c.edges);
}

/// Sampled clauses with bodies in the configured stored order, train first.
inline std::vector<data::ClauseExample> rule_clauses(const Config& c, const data::KnowledgeGraph& g) {
  auto clauses = data::sample_clauses(data::enumerate_clauses(g, c.hops), c.train_size + c.test_size, c.data_seed);
  data::order_bodies(clauses, c.body_order, c.data_seed);
  return clauses;
}

inline Data split_sets(Task task, std::vector<Matrix> sets, std::size_t test_size) {
  if (test_size >= sets.size()) throw std::invalid_argument("test size must be smaller than the dataset");
  Data d;
  d.task = task;
  d.test.assign(sets.end() - static_cast<std::ptrdiff_t>(test_size), sets.end());
  sets.resize(sets.size() - test_size);
  d.train = std::move(sets);
  return d;
}

inline Data split_clauses(std::vector<data::ClauseExample> clauses, std::size_t entities, std::size_t test_size) {
  if (test_size >= clauses.size()) throw std::invalid_argument("test size must be smaller than the dataset");
  Data d;
  d.task = Task::kRules;
  d.entities = entities;
  d.test_clauses.assign(clauses.end() - static_cast<std::ptrdiff_t>(test_size), clauses.end());
  clauses.resize(clauses.size() - test_size);
  d.train_clauses = std::move(clauses);
  return d;
}

/// Generated dataset for `c`; depends only on the task, sizes, and data_seed.
inline Data make_data(const Config& c) {
  if (c.task == Task::kRules) {
    const data::KnowledgeGraph g = rules_graph(c);
    return split_clauses(rule_clauses(c, g), g.size(), c.test_size);
  }
  return split_sets(c.task, puzzle_sets(c.task, c.train_size + c.test_size, c.data_seed), c.test_size);
}

/// Clauses rebuilt from head and body containers written by gen-data.
inline std::vector<data::ClauseExample> clauses_from_setd(const data::SetDataset& heads,
                                                           const data::SetDataset& bodies) {
  if (heads.size() != bodies.size() || heads.n != 1 || bodies.f < data::kPredicates + 2 ||
      (bodies.f - data::kPredicates) % 2 != 0) {
    throw DataError("rules data: head and body containers do not match");
  }
  const std::size_t entities = (bodies.f - data::kPredicates) / 2;
  const std::size_t n = bodies.n;
  if (heads.f != data::head_width(n, entities)) throw DataError("rules data: head width does not match bodies");
  std::vector<data::ClauseExample> out;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    data::ClauseExample c;
    c.n = n;
    c.head = heads.sets[i];
    c.body = bodies.sets[i];
    for (std::size_t k = 0; k <= n; ++k) {
      const auto block = c.head.row(0).subspan(data::kPredicates + k * entities, entities);
      c.entities.push_back(static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin()));
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs.

struct SplitTally {
  std::string split;
  metrics::Tally tally;
};

struct Outcome {
  nets::TrainResult training;
  std::vector<SplitTally> splits;
  std::unique_ptr<nets::SetModel> model;
  double seconds = 0.0;

  const metrics::Tally& tally(std::string_view split) const {
    for (const SplitTally& s : splits)
      if (s.split == split) return s.tally;
    throw std::out_of_range("no split " + std::string(split));
  }
};

inline data::ScenarioConfig scenario_config(const Config& c) {
  if (c.task == Task::kRules) {
    if (c.scenario != 1 && c.scenario != 3) throw std::invalid_argument("rules scenario must be 1 (fixed) or 3 (random)");
    return data::rule_scenario(c.scenario == 1 ? data::Order::kFixed : data::Order::kRandom, c.seed);
  }
  return data::ScenarioConfig::numbered(c.scenario, c.seed);
}

/// Success on train and test (and both, for puzzles) at the final
/// temperature. Puzzle inputs are shuffled when the scenario shuffles them.
inline std::vector<SplitTally> evaluate(const Config& c, const Data& d, nets::SetModel& model) {
  const double temperature = c.train.temperature.end;
  if (c.task == Task::kRules) {
    return {{"train", metrics::rule_tally(model, d.train_clauses, temperature)},
            {"test", metrics::rule_tally(model, d.test_clauses, temperature)}};
  }
  const data::ScenarioConfig sc = scenario_config(c);
  std::mt19937_64 rng(nets::derive_seed(c.seed, 7));
  const auto inputs = [&](const std::vector<Matrix>& sets) {
    if (sc.input_order == data::Order::kFixed) return sets;
    std::vector<Matrix> shuffled;
    for (const Matrix& s : sets) shuffled.push_back(data::shuffle_rows(s, rng));
    return shuffled;
  };
  const metrics::Tally train = metrics::reconstruction_tally(model, inputs(d.train), d.train, temperature);
  const metrics::Tally test = metrics::reconstruction_tally(model, inputs(d.test), d.test, temperature);
  return {{"train", train}, {"test", test}, {"all", {train.successes + test.successes, train.evaluated + test.evaluated}}};
}

/// Trains one model on `d` and evaluates it on every split.
inline Outcome run(const Config& c, const Data& d, const std::function<void(const nets::EpochStats&)>& on_epoch = {}) {
  if (d.task != c.task) throw std::invalid_argument("dataset task does not match the run configuration");
  const data::ScenarioConfig sc = scenario_config(c);
  nets::TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.epochs = sc.epochs(c.train.epochs);
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;

  if (c.task == Task::kRules) {
    out.model = std::make_unique<nets::RuleNet>(c.hops, d.entities, c.arch(), c.seed);
    out.training = nets::train(*out.model, data::make_rule_examples(d.train_clauses, sc), tc, on_epoch);
  } else {
    out.model = std::make_unique<nets::SetAutoencoder>(set_size(c.task), feature_count(c.task),
                                                       segment_plan(c.task), c.arch(), c.seed);
    out.training = nets::train(*out.model, data::make_scenario(d.train, sc), tc, on_epoch);
  }
  out.splits = evaluate(c, d, *out.model);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline void write_trace_csv(std::ostream& out, const nets::TrainResult& r) {
  out << "epoch,train_loss,validation_loss,temperature\n";
  char buf[128];
  for (const nets::EpochStats& s : r.trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", s.epoch, s.train_loss, s.validation_loss, s.temperature);
    out << buf;
  }
}

inline void write_eval_csv(std::ostream& out, const Outcome& o) {
  out << "split,successes,evaluated,ratio\n";
  char buf[32];
  for (const SplitTally& s : o.splits) {
    std::snprintf(buf, sizeof buf, "%.6f", s.tally.ratio());
    out << s.split << ',' << s.tally.successes << ',' << s.tally.evaluated << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Grids.

struct GridSpec {
  std::vector<LossKind> losses;
  std::vector<int> scenarios;
  std::size_t runs = 2;
  std::size_t jobs = 1;
  /// Explicit run seeds; when set, overrides `runs`.
  std::vector<std::uint64_t> seeds;

  std::size_t run_count() const { return seeds.empty() ? runs : seeds.size(); }
  std::uint64_t seed(std::uint64_t base, std::size_t run) const { return seeds.empty() ? base + run : seeds[run]; }
};

struct GridCell {
  LossKind loss;
  int scenario;
  std::size_t run;
};

/// Every (loss, scenario, run) of `spec` on shared data; run r uses seed
/// base.seed + r unless `spec.seeds` is set. A failing run is recorded with
/// its error and the grid continues. `on_done` is called under a lock as
/// runs finish.
inline metrics::GridReport run_grid(
    const Config& base, const Data& d, const GridSpec& spec,
    const std::function<void(const GridCell&, const Outcome*, const metrics::EvalReport&)>& on_done = {}) {
  std::vector<GridCell> cells;
  for (LossKind k : spec.losses)
    for (int s : spec.scenarios)
      for (std::size_t r = 0; r < spec.run_count(); ++r) cells.push_back({k, s, r});

  std::vector<std::string> columns;
  for (int s : spec.scenarios) columns.push_back(std::to_string(s));
  const std::string split(headline_split(base.task));
  std::vector<std::vector<metrics::EvalReport>> reports(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex lock;

  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const GridCell& cell = cells[i];
      Config c = base;
      c.train.loss.kind = cell.loss;
      c.scenario = cell.scenario;
      c.seed = spec.seed(base.seed, cell.run);
      metrics::EvalReport proto;
      proto.task = task_name(base.task);
      proto.loss = cell.loss;
      proto.column = std::to_string(cell.scenario);
      proto.run = cell.run;
      proto.seed = c.seed;
      std::unique_ptr<Outcome> outcome;
      std::string error;
      try {
        outcome = std::make_unique<Outcome>(run(c, d));
      } catch (const std::exception& e) {
        error = e.what();
      }
      for (const char* s : {"train", "test", "all"}) {
        if (base.task == Task::kRules && std::string_view(s) == "all") continue;
        metrics::EvalReport r = proto;
        r.split = s;
        r.error = error;
        if (outcome) r.tally = outcome->tally(s);
        reports[i].push_back(r);
      }
      std::lock_guard<std::mutex> g(lock);
      if (on_done) {
        for (const metrics::EvalReport& r : reports[i])
          if (r.split == split) on_done(cell, outcome.get(), r);
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  metrics::GridReport grid(spec.losses, columns, split);
  for (auto& rs : reports)
    for (auto& r : rs) grid.add(std::move(r));
  return grid;
}

}  // namespace setloss::experiments
