#pragma once

// Column layout of an object vector: consecutive segments, each activated by
// a softmax (one-hot block) or elementwise sigmoid (independent bits).

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "setloss/autodiff.hpp"
#include "setloss/matrix.hpp"

namespace setloss {

enum class Activation { kSoftmax, kSigmoid };

struct Segment {
  std::size_t length = 0;
  Activation activation = Activation::kSigmoid;

  friend bool operator==(const Segment&, const Segment&) = default;
};

using SegmentPlan = std::vector<Segment>;

inline std::size_t plan_width(const SegmentPlan& plan) {
  std::size_t total = 0;
  for (const Segment& s : plan) total += s.length;
  return total;
}

inline void check_plan(const SegmentPlan& plan, std::size_t features) {
  if (plan.empty() || plan_width(plan) != features) {
    throw std::invalid_argument("segment plan covers " + std::to_string(plan_width(plan)) + " of " +
                                std::to_string(features) + " features");
  }
  for (const Segment& s : plan) {
    if (s.length == 0) throw std::invalid_argument("segment plan: empty segment");
  }
}

/// Applies each segment's activation to its column block.
inline ad::Var activate_segments(ad::Tape& tape, ad::Var logits, const SegmentPlan& plan) {
  check_plan(plan, logits.cols());
  std::vector<ad::Var> parts;
  std::size_t col = 0;
  for (const Segment& s : plan) {
    ad::Var block = plan.size() == 1 ? logits : tape.slice_cols(logits, col, s.length);
    parts.push_back(s.activation == Activation::kSoftmax ? tape.softmax(block, Axis::kRow) : tape.sigmoid(block));
    col += s.length;
  }
  if (parts.size() == 1) return parts.front();
  return tape.concat(parts, Axis::kRow);
}

/// Rounds one row to {0,1}: argmax inside softmax segments (lowest index on
/// ties), threshold 0.5 inside sigmoid segments.
inline std::vector<double> round_row(std::span<const double> row, const SegmentPlan& plan) {
  check_plan(plan, row.size());
  std::vector<double> out(row.size(), 0.0);
  std::size_t col = 0;
  for (const Segment& s : plan) {
    if (s.activation == Activation::kSoftmax) {
      std::size_t best = col;
      for (std::size_t k = col + 1; k < col + s.length; ++k)
        if (row[k] > row[best]) best = k;
      out[best] = 1.0;
    } else {
      for (std::size_t k = col; k < col + s.length; ++k) out[k] = row[k] >= 0.5 ? 1.0 : 0.0;
    }
    col += s.length;
  }
  return out;
}

inline Matrix round_rows(const Matrix& m, const SegmentPlan& plan) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const std::vector<double> rounded = round_row(m.row(r), plan);
    std::copy(rounded.begin(), rounded.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace setloss
