#pragma once

// Reconstruction success, rule-learning accuracy, and grid reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "setloss/datasets.hpp"
#include "setloss/losses.hpp"
#include "setloss/matrix.hpp"
#include "setloss/nets.hpp"
#include "setloss/segments.hpp"

namespace setloss::metrics {

namespace detail {

inline std::string row_key(std::span<const double> row) {
  std::string key(row.size(), '0');
  for (std::size_t c = 0; c < row.size(); ++c)
    if (row[c] >= 0.5) key[c] = '1';
  return key;
}

}  // namespace detail

/// True iff the rounded output rows equal the target rows as multisets.
/// Target entries must already be binary.
inline bool reconstruction_success(const Matrix& target, const Matrix& output, const SegmentPlan& plan) {
  if (!target.same_shape(output)) {
    throw std::invalid_argument("reconstruction_success: target " + shape_string(target) + " vs output " +
                                shape_string(output));
  }
  std::map<std::string, long> balance;
  for (std::size_t r = 0; r < target.rows(); ++r) ++balance[detail::row_key(target.row(r))];
  for (std::size_t r = 0; r < output.rows(); ++r) {
    const std::vector<double> rounded = round_row(output.row(r), plan);
    if (--balance[detail::row_key(rounded)] < 0) return false;
  }
  return true;
}

inline bool reconstruction_success(const ObjectSet& target, const ObjectSet& output, const SegmentPlan& plan) {
  return reconstruction_success(target.values(), output.values(), plan);
}

struct Tally {
  std::size_t successes = 0;
  std::size_t evaluated = 0;

  double ratio() const { return evaluated ? static_cast<double>(successes) / static_cast<double>(evaluated) : 0.0; }
};

/// Success count of a model over (input, target) set pairs.
inline Tally reconstruction_tally(nets::SetModel& model, const std::vector<Matrix>& inputs,
                                  const std::vector<Matrix>& targets, double temperature) {
  if (inputs.size() != targets.size()) throw std::invalid_argument("reconstruction_tally: size mismatch");
  Tally t;
  if (inputs.empty()) return t;
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  const Matrix out = model.predict(nets::stack(inputs, order), temperature);
  const std::size_t rows = model.output_rows();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    t.successes += reconstruction_success(targets[i], out.row_block(i * rows, rows), model.segments());
    ++t.evaluated;
  }
  return t;
}

/// True iff every target body term is among the argmax-decoded output rows.
inline bool rule_success(const Matrix& target_body, const Matrix& output, std::size_t entities) {
  if (!target_body.same_shape(output)) {
    throw std::invalid_argument("rule_success: target " + shape_string(target_body) + " vs output " +
                                shape_string(output));
  }
  std::vector<data::Term> decoded;
  for (std::size_t r = 0; r < output.rows(); ++r) decoded.push_back(data::decode_term(output.row(r), entities));
  for (std::size_t r = 0; r < target_body.rows(); ++r) {
    if (std::find(decoded.begin(), decoded.end(), data::decode_term(target_body.row(r), entities)) == decoded.end()) {
      return false;
    }
  }
  return true;
}

inline Tally rule_tally(nets::SetModel& model, const std::vector<data::ClauseExample>& clauses, double temperature) {
  Tally t;
  if (clauses.empty()) return t;
  const std::size_t entities = (model.output_cols() - data::kPredicates) / 2;
  Matrix heads(clauses.size(), model.input_cols());
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    std::copy(clauses[i].head.values().begin(), clauses[i].head.values().end(), heads.row(i).begin());
  }
  const Matrix out = model.predict(heads, temperature);
  const std::size_t rows = model.output_rows();
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    t.successes += rule_success(clauses[i].body, out.row_block(i * rows, rows), entities);
    ++t.evaluated;
  }
  return t;
}

inline double rule_accuracy(const std::vector<data::ClauseExample>& clauses, nets::SetModel& model,
                            double temperature = 0.7) {
  return rule_tally(model, clauses, temperature).ratio();
}

// ---------------------------------------------------------------------------
// Reports.

/// One trained run evaluated on one split.
struct EvalReport {
  std::string task;
  LossKind loss = LossKind::kSetCrossEntropy;
  std::string column;  // scenario number or order variant
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::string split;
  Tally tally;
  std::string error;  // non-empty when the run failed

  bool ok() const { return error.empty(); }
  double ratio() const { return tally.ratio(); }
};

struct CellSummary {
  std::size_t runs = 0;
  std::size_t failures = 0;
  double best = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Aggregates reports of one split into (loss, column) cells.
class GridReport {
 public:
  GridReport(std::vector<LossKind> losses, std::vector<std::string> columns, std::string split)
      : losses_(std::move(losses)), columns_(std::move(columns)), split_(std::move(split)) {}

  void add(EvalReport r) { reports_.push_back(std::move(r)); }
  const std::vector<EvalReport>& reports() const noexcept { return reports_; }
  const std::vector<LossKind>& losses() const noexcept { return losses_; }
  const std::vector<std::string>& columns() const noexcept { return columns_; }

  CellSummary cell(LossKind loss, const std::string& column) const {
    CellSummary s;
    std::vector<double> ratios;
    for (const EvalReport& r : reports_) {
      if (r.loss != loss || r.column != column || r.split != split_) continue;
      ++s.runs;
      if (!r.ok()) {
        ++s.failures;
        continue;
      }
      ratios.push_back(r.ratio());
    }
    if (ratios.empty()) return s;
    s.best = *std::max_element(ratios.begin(), ratios.end());
    for (double v : ratios) s.mean += v;
    s.mean /= static_cast<double>(ratios.size());
    for (double v : ratios) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(ratios.size()));
    return s;
  }

  /// Best/mean/std table, rows (a)-(d), one column per scenario.
  void write_markdown(std::ostream& out) const {
    out << "| loss |";
    for (const std::string& c : columns_) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < columns_.size(); ++i) out << "---|";
    out << '\n';
    char buf[96];
    for (LossKind k : losses_) {
      out << "| " << loss_row_label(k) << " |";
      for (const std::string& c : columns_) {
        const CellSummary s = cell(k, c);
        if (s.runs == s.failures) {
          out << (s.runs ? " failed |" : " - |");
          continue;
        }
        std::snprintf(buf, sizeof buf, " %.2f (%.2f +- %.2f)", s.best, s.mean, s.stddev);
        out << buf;
        if (s.failures) out << " [" << s.failures << " failed]";
        out << " |";
      }
      out << '\n';
    }
  }

  static void write_csv_header(std::ostream& out) {
    out << "task,loss,column,run,seed,split,successes,evaluated,ratio,status\n";
  }

  /// One line per report, in insertion order.
  void write_csv(std::ostream& out, bool header = true) const {
    if (header) write_csv_header(out);
    char buf[32];
    for (const EvalReport& r : reports_) {
      std::snprintf(buf, sizeof buf, "%.6f", r.ratio());
      out << r.task << ',' << loss_name(r.loss) << ',' << r.column << ',' << r.run << ',' << r.seed << ','
          << r.split << ',' << r.tally.successes << ',' << r.tally.evaluated << ',' << buf << ','
          << (r.ok() ? "ok" : "failed") << '\n';
    }
  }

 private:
  std::vector<LossKind> losses_;
  std::vector<std::string> columns_;
  std::string split_;
  std::vector<EvalReport> reports_;
};

}  // namespace setloss::metrics
