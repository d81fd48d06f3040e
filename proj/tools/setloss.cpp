// setloss: dataset generation, training, evaluation, loss x scenario grids,
// gradient checks, and manifest replay.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manifest.hpp"
#include "setloss/experiments.hpp"
#include "setloss/gradcheck_suite.hpp"

namespace {

using namespace setloss;
using namespace setloss::cli;
namespace ex = setloss::experiments;

constexpr int kUsage = 1;
constexpr int kDataFailure = 2;
constexpr int kNumericalFailure = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
T parse_or_usage(std::optional<T> v, const std::string& what, const std::string& text) {
  if (!v) throw UsageError("unknown " + what + " '" + text + "'");
  return *v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

/// Records the final value of every option given on the command line or in
/// a config file.
void record_options(const CLI::App& sub, Manifest& m) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->count() == 0 || opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    if (key == "help" || key == "config" || key == "out" || key == "jobs") continue;
    m.option(key, opt->results().back());
  }
}

// ---------------------------------------------------------------------------
// Experiment options shared by train, eval, and grid.

struct ExperimentFlags {
  std::string task = "puzzle";
  bool paper_scale = false;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 1;
  std::optional<std::size_t> train_size, test_size, epochs, batch_size, width, latent, hops;
  std::optional<double> lr, dropout, row_bias, epsilon;
  std::optional<std::string> latent_mode, body_order;
  std::optional<bool> batchnorm, latent_batchnorm;
  std::string edges;
  std::string data_dir;

  void add_to(CLI::App& app) {
    app.add_option("--task", task, "puzzle | puzzle-variable | rules")->capture_default_str();
    app.add_flag("--paper-scale", paper_scale, "Full-size networks and datasets");
    app.add_option("--seed", seed, "Run seed")->capture_default_str();
    app.add_option("--data-seed", data_seed, "Dataset sampling seed")->capture_default_str();
    app.add_option("--data", data_dir, "Directory written by gen-data; generated in memory when omitted");
    app.add_option("--train-size", train_size);
    app.add_option("--test-size", test_size);
    app.add_option("--epochs", epochs);
    app.add_option("--batch-size", batch_size);
    app.add_option("--lr", lr, "Adam learning rate");
    app.add_option("--width", width, "Hidden layer width");
    app.add_option("--latent", latent, "Latent units");
    app.add_option("--latent-mode", latent_mode, "gumbel-binary | sigmoid");
    app.add_option("--dropout", dropout);
    app.add_option("--batchnorm", batchnorm, "true | false");
    app.add_option("--latent-batchnorm", latent_batchnorm, "true | false");
    app.add_option("--row-bias", row_bias, "Initial per-row output bias");
    app.add_option("--epsilon", epsilon, "Target clipping in the element cross entropy");
    app.add_option("--n", hops, "Rules: body length");
    app.add_option("--edges", edges, "Rules: edge list file (synthetic graph when omitted)");
    app.add_option("--body-order", body_order, "Rules: chain | arbitrary");
  }

  ex::Config config() const {
    const ex::Task t = parse_or_usage(ex::parse_task(task), "task", task);
    ex::Config c = ex::preset(t, paper_scale);
    c.seed = seed;
    c.data_seed = data_seed;
    c.edges = edges;
    if (train_size) c.train_size = *train_size;
    if (test_size) c.test_size = *test_size;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.adam.learning_rate = *lr;
    if (epsilon) c.train.epsilon = *epsilon;
    nets::ArchConfig& a = c.arch();
    if (width) a.width = *width;
    if (latent) a.latent = *latent;
    if (latent_mode) a.latent_mode = parse_or_usage(nets::parse_latent_mode(*latent_mode), "latent mode", *latent_mode);
    if (dropout) a.dropout = *dropout;
    if (batchnorm) a.batchnorm = *batchnorm;
    if (latent_batchnorm) a.latent_batchnorm = *latent_batchnorm;
    if (row_bias) a.output_row_bias = *row_bias;
    if (t != ex::Task::kRules && (hops || body_order || !edges.empty())) {
      throw UsageError("--n, --edges and --body-order apply to the rules task only");
    }
    if (hops) c.hops = *hops;
    if (body_order) {
      if (*body_order == "chain") c.body_order = data::BodyOrder::kChain;
      else if (*body_order == "arbitrary") c.body_order = data::BodyOrder::kArbitrary;
      else throw UsageError("unknown body order '" + *body_order + "'");
    }
    return c;
  }
};

json resolved_config(const ex::Config& c) {
  const nets::ArchConfig& a = c.arch();
  json j;
  j["task"] = ex::task_name(c.task);
  j["scenario"] = c.scenario;
  j["seed"] = c.seed;
  j["data_seed"] = c.data_seed;
  j["train_size"] = c.train_size;
  j["test_size"] = c.test_size;
  j["loss"] = loss_name(c.train.loss.kind);
  j["epsilon"] = c.train.epsilon;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["lr"] = c.train.adam.learning_rate;
  j["temperature"] = {c.train.temperature.start, c.train.temperature.end};
  j["validation_fraction"] = c.train.validation_fraction;
  j["width"] = a.width;
  j["latent"] = a.latent;
  j["latent_mode"] = nets::latent_mode_name(a.latent_mode);
  j["dropout"] = a.dropout;
  j["batchnorm"] = a.batchnorm;
  j["latent_batchnorm"] = a.latent_batchnorm;
  j["row_bias"] = a.output_row_bias;
  if (c.task == ex::Task::kRules) {
    j["n"] = c.hops;
    j["edges"] = c.edges.empty() ? "synthetic" : c.edges;
    j["body_order"] = c.body_order == data::BodyOrder::kChain ? "chain" : "arbitrary";
  }
  return j;
}

// ---------------------------------------------------------------------------
// Dataset files.

std::string puzzle_file(ex::Task t) { return std::string(ex::task_name(t)) + ".setd"; }
std::string heads_file(std::size_t n) { return "rules-n" + std::to_string(n) + "-heads.setd"; }
std::string bodies_file(std::size_t n) { return "rules-n" + std::to_string(n) + "-bodies.setd"; }

/// Dataset for `c`, from `dir` when given, hashing the files read.
ex::Data load_data(const ex::Config& c, const std::string& dir, Manifest& m) {
  if (dir.empty()) {
    if (!c.edges.empty()) m.input(c.edges);
    return ex::make_data(c);
  }
  const std::size_t total = c.train_size + c.test_size;
  if (c.task == ex::Task::kRules) {
    const fs::path heads = fs::path(dir) / heads_file(c.hops), bodies = fs::path(dir) / bodies_file(c.hops);
    auto clauses = ex::clauses_from_setd(data::load_setd(heads), data::load_setd(bodies));
    m.input(heads);
    m.input(bodies);
    if (clauses.empty()) throw DataError("rules data: no clauses in " + heads.string());
    if (clauses.size() < total) {
      throw DataError(heads.string() + " holds " + std::to_string(clauses.size()) + " clauses, " +
                      std::to_string(total) + " requested");
    }
    const std::size_t entities = (clauses.front().body.cols() - data::kPredicates) / 2;
    return ex::split_clauses(data::sample_clauses(std::move(clauses), total, c.data_seed), entities, c.test_size);
  }
  const fs::path path = fs::path(dir) / puzzle_file(c.task);
  data::SetDataset d = data::load_setd(path);
  m.input(path);
  if (d.n != ex::set_size(c.task) || d.f != ex::feature_count(c.task)) {
    throw DataError(path.string() + " holds " + std::to_string(d.n) + "x" + std::to_string(d.f) + " sets, expected " +
                    std::to_string(ex::set_size(c.task)) + "x" + std::to_string(ex::feature_count(c.task)));
  }
  if (d.size() < total) {
    throw DataError(path.string() + " holds " + std::to_string(d.size()) + " sets, " + std::to_string(total) +
                    " requested");
  }
  d.sets.resize(total);
  return ex::split_sets(c.task, std::move(d.sets), c.test_size);
}

/// model.setm, trace.csv, and eval.csv of one run under `dir`.
void write_run(const fs::path& out_dir, const fs::path& rel, const ex::Outcome& o, Manifest& m) {
  fs::create_directories(out_dir / rel);
  save_checkpoint(out_dir / rel / "model.setm", o.model->state());
  std::ostringstream trace, eval;
  ex::write_trace_csv(trace, o.training);
  ex::write_eval_csv(eval, o);
  write_text(out_dir / rel / "trace.csv", trace.str());
  write_text(out_dir / rel / "eval.csv", eval.str());
  for (const char* f : {"model.setm", "trace.csv", "eval.csv"}) m.output(out_dir, rel / f);
}

// ---------------------------------------------------------------------------
// Commands.

struct GenDataFlags {
  std::string kind;
  std::optional<std::size_t> count;
  std::uint64_t seed = 1;
  std::string out = "data";
  bool solvable_only = false;
  bool exhaustive = false;
  bool csv = false;
  std::optional<std::size_t> hops;
  std::string edges;
  bool synthetic = false;
  std::string body_order = "arbitrary";
};

void save_dataset(const fs::path& out, const std::string& name, const data::SetDataset& d, bool csv, Manifest& m) {
  data::save_setd(out / name, d);
  m.output(out, name);
  if (csv) {
    const std::string csv_name = fs::path(name).replace_extension(".csv").string();
    std::ostringstream text;
    data::write_csv(text, d);
    write_text(out / csv_name, text.str());
    m.output(out, csv_name);
  }
  std::cout << "wrote " << (out / name).string() << ": " << d.size() << " sets of " << d.n << "x" << d.f << '\n';
}

int cmd_gen_data(const GenDataFlags& f, const CLI::App& sub) {
  Manifest m("gen-data", f.kind);
  record_options(sub, m);
  m.seed(f.seed);
  m.resolved("kind", f.kind);
  m.resolved("seed", f.seed);
  m.resolved("count", f.count ? json(*f.count) : json("all"));
  m.resolved("solvable_only", f.solvable_only);
  const fs::path out(f.out);
  const ex::Task task = parse_or_usage(ex::parse_task(f.kind), "dataset kind", f.kind);
  if (f.count && f.exhaustive) throw UsageError("--count and --exhaustive are exclusive");
  fs::create_directories(out);

  if (task == ex::Task::kRules) {
    if (f.solvable_only) throw UsageError("--solvable-only applies to puzzle kinds only");
    if (f.synthetic && !f.edges.empty()) throw UsageError("--edges and --synthetic are exclusive");
    const std::size_t n = f.hops.value_or(2);
    const data::KnowledgeGraph g =
        f.edges.empty() ? data::synthetic_geographic_graph() : data::load_edge_list(f.edges);
    if (!f.edges.empty()) m.input(f.edges);
    auto clauses = data::enumerate_clauses(g, n);
    const std::size_t all = clauses.size();
    if (f.count) clauses = data::sample_clauses(std::move(clauses), *f.count, f.seed);
    if (f.body_order != "chain" && f.body_order != "arbitrary") {
      throw UsageError("unknown body order '" + f.body_order + "'");
    }
    data::order_bodies(clauses, f.body_order == "chain" ? data::BodyOrder::kChain : data::BodyOrder::kArbitrary,
                       f.seed);
    std::vector<Matrix> heads, bodies;
    for (const data::ClauseExample& c : clauses) {
      heads.push_back(c.head);
      bodies.push_back(c.body);
    }
    std::cout << "graph: " << g.size() << " entities, " << all << " clauses with n=" << n << '\n';
    std::ostringstream edge_list;
    g.write_edge_list(edge_list);
    write_text(out / "rules-graph.txt", edge_list.str());
    m.output(out, "rules-graph.txt");
    save_dataset(out, heads_file(n), data::make_dataset(std::move(heads)), f.csv, m);
    save_dataset(out, bodies_file(n), data::make_dataset(std::move(bodies)), f.csv, m);
  } else {
    if (f.synthetic || !f.edges.empty() || f.hops) throw UsageError("--n, --edges and --synthetic apply to rules only");
    std::vector<data::PuzzleState> states = f.exhaustive ? data::enumerate_states(f.solvable_only)
                                                         : data::sample_states(f.count.value_or(5000), f.seed,
                                                                               f.solvable_only);
    std::vector<Matrix> sets;
    for (const data::PuzzleState& s : states) sets.push_back(data::encode_puzzle_state(s).values());
    if (task == ex::Task::kPuzzleVariable) {
      sets = data::drop_elements(sets, f.seed);
      for (Matrix& s : sets) s = data::pad_with_dummies(s, data::kTiles).values();
    }
    save_dataset(out, puzzle_file(task), data::make_dataset(std::move(sets)), f.csv, m);
  }
  m.write(out / (f.kind + ".manifest.json"));
  return 0;
}

struct TrainFlags {
  ExperimentFlags exp;
  std::string loss = "sce";
  int scenario = 1;
  std::string out = "runs/train";
};

void print_splits(const ex::Outcome& o) {
  for (const ex::SplitTally& s : o.splits) {
    std::cout << "  " << s.split << ": " << s.tally.successes << "/" << s.tally.evaluated << " = "
              << format("%.4f", s.tally.ratio()) << '\n';
  }
}

int cmd_train(const TrainFlags& f, const CLI::App& sub) {
  Manifest m("train");
  record_options(sub, m);
  ex::Config c = f.exp.config();
  c.train.loss.kind = parse_or_usage(parse_loss(f.loss), "loss", f.loss);
  c.scenario = f.scenario;
  m.seed(c.seed);
  m.resolved("experiment", resolved_config(c));
  const ex::Data d = load_data(c, f.exp.data_dir, m);
  const fs::path out(f.out);
  fs::create_directories(out);

  std::cout << "train " << ex::task_name(c.task) << " loss=" << f.loss << " scenario=" << c.scenario
            << " seed=" << c.seed << '\n';
  const ex::Outcome o = ex::run(c, d, [](const nets::EpochStats& s) {
    std::cout << "  epoch " << s.epoch << " train " << format("%.5f", s.train_loss) << " validation "
              << format("%.5f", s.validation_loss) << '\n';
  });
  std::cout << "best epoch " << o.training.best_epoch << ", " << format("%.1f", o.seconds) << " s\n";
  print_splits(o);
  write_run(out, ".", o, m);
  m.write(out / "manifest.json");
  return 0;
}

struct EvalFlags {
  ExperimentFlags exp;
  std::string model;
  int scenario = 1;
  std::string out = "runs/eval";
};

int cmd_eval(const EvalFlags& f, const CLI::App& sub) {
  Manifest m("eval");
  record_options(sub, m);
  ex::Config c = f.exp.config();
  c.scenario = f.scenario;
  m.seed(c.seed);
  m.resolved("experiment", resolved_config(c));
  const std::unique_ptr<nets::SetModel> model = nets::load_model(load_checkpoint(f.model));
  m.input(f.model);
  const ex::Data d = load_data(c, f.exp.data_dir, m);
  ex::Outcome o;
  o.splits = ex::evaluate(c, d, *model);
  print_splits(o);
  const fs::path out(f.out);
  fs::create_directories(out);
  std::ostringstream eval;
  ex::write_eval_csv(eval, o);
  write_text(out / "eval.csv", eval.str());
  m.output(out, "eval.csv");
  m.write(out / "manifest.json");
  return 0;
}

struct GridFlags {
  ExperimentFlags exp;
  std::size_t runs = 2;
  std::string seeds;
  std::string losses = "ce,sce,avg,hausdorff";
  std::string scenarios;
  std::size_t jobs = 1;
  std::string out = "runs/grid";
};

int cmd_grid(const GridFlags& f, const CLI::App& sub) {
  Manifest m("grid");
  record_options(sub, m);
  const ex::Config c = f.exp.config();
  ex::GridSpec spec;
  for (const std::string& l : split_list(f.losses)) spec.losses.push_back(parse_or_usage(parse_loss(l), "loss", l));
  const std::string scenarios = !f.scenarios.empty() ? f.scenarios : c.task == ex::Task::kRules ? "1,3" : "1,2,3,4";
  for (const std::string& s : split_list(scenarios)) {
    try {
      spec.scenarios.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw UsageError("bad scenario '" + s + "'");
    }
  }
  for (const std::string& s : split_list(f.seeds)) {
    try {
      spec.seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + s + "'");
    }
  }
  spec.runs = f.runs;
  spec.jobs = f.jobs;
  if (spec.losses.empty() || spec.scenarios.empty() || spec.run_count() == 0) {
    throw UsageError("grid needs at least one loss, scenario, and run");
  }
  m.seed(c.seed);
  json resolved = resolved_config(c);
  resolved.erase("loss");
  resolved.erase("scenario");
  resolved.erase("seed");
  m.resolved("experiment", resolved);
  json seeds = json::array();
  for (std::size_t r = 0; r < spec.run_count(); ++r) seeds.push_back(spec.seed(c.seed, r));
  m.resolved("run_seeds", seeds);
  m.resolved("losses", split_list(f.losses));
  m.resolved("scenarios", spec.scenarios);

  const ex::Data d = load_data(c, f.exp.data_dir, m);
  const fs::path out(f.out);
  fs::create_directories(out);
  std::cout << "grid " << ex::task_name(c.task) << ": " << spec.losses.size() << " losses x " << spec.scenarios.size()
            << " scenarios x " << spec.run_count() << " runs, " << spec.jobs << " jobs\n";

  Manifest cells("grid-cells");
  const metrics::GridReport grid =
      ex::run_grid(c, d, spec, [&](const ex::GridCell& cell, const ex::Outcome* o, const metrics::EvalReport& r) {
        const std::string name = std::string(loss_name(cell.loss)) + "-s" + std::to_string(cell.scenario) + "-r" +
                                 std::to_string(cell.run);
        std::cout << "  " << name << ": " << (r.ok() ? format("%.4f", r.ratio()) : "failed: " + r.error) << '\n'
                  << std::flush;
        if (o) write_run(out, fs::path("cells") / name, *o, cells);
      });
  for (const auto& [path, hash] : cells.to_json()["outputs"].items()) m.output(out, path);

  // One row per run on the headline split; every split in grid_splits.csv.
  std::ostringstream csv, all_csv, md;
  metrics::GridReport::write_csv_header(csv);
  char buf[32];
  for (const metrics::EvalReport& r : grid.reports()) {
    if (r.split != ex::headline_split(c.task)) continue;
    std::snprintf(buf, sizeof buf, "%.6f", r.ratio());
    csv << r.task << ',' << loss_name(r.loss) << ',' << r.column << ',' << r.run << ',' << r.seed << ',' << r.split
        << ',' << r.tally.successes << ',' << r.tally.evaluated << ',' << buf << ',' << (r.ok() ? "ok" : "failed")
        << '\n';
  }
  grid.write_csv(all_csv);
  md << "# " << ex::task_name(c.task) << ": best (mean +- std) success over " << spec.run_count()
     << " runs, split '" << ex::headline_split(c.task) << "'\n\n";
  grid.write_markdown(md);
  for (const char* split : {"train", "test"}) {
    if (split == ex::headline_split(c.task)) continue;
    metrics::GridReport other(spec.losses, grid.columns(), split);
    for (const metrics::EvalReport& r : grid.reports()) other.add(r);
    md << "\n## split '" << split << "'\n\n";
    other.write_markdown(md);
  }
  write_text(out / "grid.csv", csv.str());
  write_text(out / "grid_splits.csv", all_csv.str());
  write_text(out / "grid.md", md.str());
  for (const char* file : {"grid.csv", "grid_splits.csv", "grid.md"}) m.output(out, file);
  m.write(out / "manifest.json");
  std::cout << '\n' << md.str();
  return 0;
}

struct GradcheckFlags {
  std::uint64_t seed = 2024;
  std::size_t graphs = 200;
  std::string inject_fault;
  bool verbose = false;
};

int cmd_gradcheck(const GradcheckFlags& f) {
  gradcheck::SuiteOptions opt;
  opt.seed = f.seed;
  opt.random_graphs = f.graphs;
  if (!f.inject_fault.empty()) {
    opt.corrupt = parse_or_usage(ad::op_from_name(f.inject_fault), "op", f.inject_fault);
  }
  std::size_t failed = 0;
  for (const gradcheck::Result& r : gradcheck::run_suite(opt)) {
    if (!r.passed) ++failed;
    if (!r.passed || f.verbose) std::cout << r.describe() << '\n';
  }
  std::cout << (failed ? std::to_string(failed) + " gradient checks failed" : "all gradient checks passed") << '\n';
  return failed ? kNumericalFailure : 0;
}

int dispatch(std::vector<std::string> args);

/// Re-runs the command recorded in a manifest into `out` and compares every
/// recorded output by content hash.
int cmd_replay(const std::string& manifest_path, const std::string& out) {
  const json m = json::parse(read_file(manifest_path));
  std::vector<std::string> args = {m.at("command").get<std::string>()};
  if (m.contains("positional")) args.push_back(m["positional"]);
  for (const auto& [key, value] : m.at("options").items()) args.push_back("--" + key + "=" + value.get<std::string>());
  args.push_back("--out=" + out);
  std::cout << "replay:";
  for (const std::string& a : args) std::cout << ' ' << a;
  std::cout << '\n';
  if (const int code = dispatch(args); code != 0) return code;
  std::size_t mismatches = 0;
  for (const auto& [path, hash] : m.at("outputs").items()) {
    const fs::path file = fs::path(out) / path;
    const std::string now = fs::exists(file) ? hash_file(file) : "missing";
    if (now != hash) {
      ++mismatches;
      std::cout << "MISMATCH " << path << ": " << hash << " -> " << now << '\n';
    }
  }
  std::cout << m.at("outputs").size() - mismatches << "/" << m.at("outputs").size() << " outputs identical\n";
  return mismatches ? kNumericalFailure : 0;
}

/// `--config <path>` lines become --key=value arguments placed before the
/// user's flags, so flags win under the last-value policy.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      continue;
    }
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    std::vector<std::string> extra;
    for (std::string line; std::getline(in, line);) {
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(path + ": expected key=value, got '" + line + "'");
      const auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      extra.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    // Insert after the subcommand and its positional kind, if any.
    std::size_t at = args.empty() ? 0 : 1;
    if (at < args.size() && !args[0].empty() && args[0] == "gen-data" && !args[at].starts_with("-")) ++at;
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
    break;
  }
  return args;
}

int dispatch(std::vector<std::string> args) {
  args = expand_config(std::move(args));
  CLI::App app{"Set cross entropy experiments", "setloss"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every command");
  const auto add_config_flag = [](CLI::App* sub) {
    // Consumed by expand_config; declared for --help.
    sub->add_option("--config", "Flat key=value file with flag names as keys; flags win");
  };

  GenDataFlags gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write a dataset as SETD files");
  gen_cmd->add_option("kind", gen.kind, "puzzle | puzzle-variable | rules")->required();
  gen_cmd->add_option("--count", gen.count, "Sets to sample (puzzles: 5000; rules: all clauses)");
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_flag("--solvable-only", gen.solvable_only, "Puzzles: solvable states only");
  gen_cmd->add_flag("--exhaustive", gen.exhaustive, "Puzzles: every state instead of a sample");
  gen_cmd->add_flag("--csv", gen.csv, "Also write CSV copies");
  gen_cmd->add_option("--n", gen.hops, "Rules: body length (default 2)");
  gen_cmd->add_option("--edges", gen.edges, "Rules: edge list file");
  gen_cmd->add_flag("--synthetic", gen.synthetic, "Rules: built-in synthetic graph (default)");
  gen_cmd->add_option("--body-order", gen.body_order, "Rules: chain | arbitrary")->capture_default_str();
  add_config_flag(gen_cmd);

  TrainFlags train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model and evaluate it");
  train.exp.add_to(*train_cmd);
  train_cmd->add_option("--loss", train.loss, "ce | sce | avg | hausdorff")->capture_default_str();
  train_cmd->add_option("--scenario", train.scenario, "1-4 (rules: 1 or 3)")->capture_default_str();
  train_cmd->add_option("--out", train.out, "Output directory")->capture_default_str();
  add_config_flag(train_cmd);

  EvalFlags eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model");
  eval.exp.add_to(*eval_cmd);
  eval_cmd->add_option("--model", eval.model, "SETM checkpoint")->required();
  eval_cmd->add_option("--scenario", eval.scenario, "Input order of the evaluation sets")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "Output directory")->capture_default_str();
  add_config_flag(eval_cmd);

  GridFlags grid;
  CLI::App* grid_cmd = app.add_subcommand("grid", "Every loss x scenario cell, several runs each");
  grid.exp.add_to(*grid_cmd);
  grid_cmd->add_option("--runs", grid.runs, "Runs per cell; run r uses seed + r")->capture_default_str();
  grid_cmd->add_option("--seeds", grid.seeds, "Comma-separated run seeds; overrides --runs");
  grid_cmd->add_option("--losses", grid.losses)->capture_default_str();
  grid_cmd->add_option("--scenarios", grid.scenarios, "Default 1,2,3,4 (rules: 1,3)");
  grid_cmd->add_option("--jobs", grid.jobs, "Worker threads")->envname("SETLOSS_JOBS")->capture_default_str();
  grid_cmd->add_option("--out", grid.out, "Output directory")->capture_default_str();
  add_config_flag(grid_cmd);

  GradcheckFlags gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every op, loss, and model");
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gc_cmd->add_option("--graphs", gc.graphs, "Random graphs")->capture_default_str();
  gc_cmd->add_flag("--verbose", gc.verbose, "Print passing checks too");
  gc_cmd->add_option("--inject-fault", gc.inject_fault)->group("");

  std::string replay_manifest, replay_out;
  CLI::App* replay_cmd = app.add_subcommand("replay", "Re-run a manifest and compare outputs");
  replay_cmd->add_option("manifest", replay_manifest)->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", replay_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  if (gen_cmd->parsed()) return cmd_gen_data(gen, *gen_cmd);
  if (train_cmd->parsed()) return cmd_train(train, *train_cmd);
  if (eval_cmd->parsed()) return cmd_eval(eval, *eval_cmd);
  if (grid_cmd->parsed()) return cmd_grid(grid, *grid_cmd);
  if (gc_cmd->parsed()) return cmd_gradcheck(gc);
  return cmd_replay(replay_manifest, replay_out);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const nets::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataFailure;
  }
}
