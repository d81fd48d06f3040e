#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "setloss/autodiff.hpp"
#include "setloss/matrix.hpp"

namespace setloss {

namespace detail {

inline double standard_gumbel(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double u = uniform(rng);
  if (u <= 0.0) u = std::numeric_limits<double>::min();
  return -std::log(-std::log(u));
}

inline void check_temperature(double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("gumbel softmax: temperature must be positive, got " +
                                std::to_string(temperature));
  }
}

inline void check_groups(const Matrix& logits, std::size_t group_size) {
  if (group_size == 0 || logits.cols() % group_size != 0) {
    throw std::invalid_argument("gumbel softmax: " + std::to_string(logits.cols()) +
                                " columns do not split into groups of " + std::to_string(group_size));
  }
}

}  // namespace detail

/// Softmax((logits + Gumbel noise) / temperature) over consecutive column
/// groups of `group_size`. A null `rng` means evaluation mode: no noise.
inline Matrix gumbel_softmax_sample(const Matrix& logits, double temperature, std::size_t group_size,
                                    std::mt19937_64* rng) {
  detail::check_temperature(temperature);
  detail::check_groups(logits, group_size);
  Matrix perturbed = logits;
  for (double& v : perturbed.values()) {
    if (rng) v += detail::standard_gumbel(*rng);
    v /= temperature;
  }
  const Matrix grouped = perturbed.reshaped(perturbed.size() / group_size, group_size);
  return ad::kernels::softmax(grouped, Axis::kRow).reshaped(logits.rows(), logits.cols());
}

inline Matrix gumbel_softmax_sample(const Matrix& logits, double temperature, std::mt19937_64& rng) {
  return gumbel_softmax_sample(logits, temperature, logits.cols(), &rng);
}

/// Differentiable form of gumbel_softmax_sample. The noise enters as a constant.
inline ad::Var gumbel_softmax(ad::Tape& tape, ad::Var logits, double temperature, std::size_t group_size,
                              std::mt19937_64* rng) {
  detail::check_temperature(temperature);
  const Matrix& lv = logits.value();
  detail::check_groups(lv, group_size);
  ad::Var x = logits;
  if (rng) {
    Matrix noise(lv.rows(), lv.cols());
    for (double& v : noise.values()) v = detail::standard_gumbel(*rng);
    x = tape.add(x, tape.constant(std::move(noise)));
  }
  x = tape.scale_shift(x, 1.0 / temperature);
  x = tape.reshape(x, lv.size() / group_size, group_size);
  x = tape.softmax(x, Axis::kRow);
  return tape.reshape(x, lv.rows(), lv.cols());
}

/// Two-way Gumbel-Softmax per unit with logits (l, 0), keeping the first
/// probability: sigmoid((l + g1 - g2) / temperature).
inline ad::Var binary_concrete(ad::Tape& tape, ad::Var logits, double temperature,
                               std::mt19937_64* rng) {
  detail::check_temperature(temperature);
  ad::Var x = logits;
  if (rng) {
    const Matrix& lv = logits.value();
    Matrix noise(lv.rows(), lv.cols());
    for (double& v : noise.values()) v = detail::standard_gumbel(*rng) - detail::standard_gumbel(*rng);
    x = tape.add(x, tape.constant(std::move(noise)));
  }
  return tape.sigmoid(tape.scale_shift(x, 1.0 / temperature));
}

/// Exponential annealing from `start` to `end` as progress goes 0 -> 1.
struct TemperatureSchedule {
  double start = 5.0;
  double end = 0.7;

  double at(double progress) const {
    if (progress <= 0.0) return start;
    if (progress >= 1.0) return end;
    return start * std::pow(end / start, progress);
  }
};

}  // namespace setloss
