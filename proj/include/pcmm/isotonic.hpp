#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcmm/errors.hpp"
#include "pcmm/panel_data.hpp"

namespace pcmm {

/// Right-continuous non-decreasing step function, zero before the first knot.
struct StepFunction {
  std::vector<double> knots;
  std::vector<double> values;

  double operator()(double t) const {
    auto it = std::upper_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
  }

  std::size_t size() const noexcept { return knots.size(); }

  bool is_valid() const {
    if (knots.size() != values.size()) return false;
    for (std::size_t q = 0; q < knots.size(); ++q) {
      if (!(values[q] >= 0.0) || !std::isfinite(values[q])) return false;
      if (q > 0 && (knots[q] <= knots[q - 1] || values[q] < values[q - 1])) return false;
    }
    return true;
  }
};

/// Weighted least-squares projection of `y` onto non-decreasing sequences,
/// by pool-adjacent-violators on a stack of blocks. O(r).
inline std::vector<double> weighted_isotonic(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size())
    throw std::invalid_argument("weighted_isotonic: y and w differ in length");
  if (y.empty()) throw std::invalid_argument("weighted_isotonic: empty input");
  for (double wi : w)
    if (!(wi > 0.0) || !std::isfinite(wi))
      throw std::invalid_argument("weighted_isotonic: weights must be positive and finite");

  struct Block {
    double wsum;
    double wysum;
    std::size_t len;
    double mean() const { return wysum / wsum; }
  };
  std::vector<Block> stack;
  stack.reserve(y.size());
  for (std::size_t q = 0; q < y.size(); ++q) {
    stack.push_back({w[q], w[q] * y[q], 1});
    while (stack.size() > 1 && stack[stack.size() - 2].mean() >= stack.back().mean()) {
      Block top = stack.back();
      stack.pop_back();
      stack.back().wsum += top.wsum;
      stack.back().wysum += top.wysum;
      stack.back().len += top.len;
    }
  }

  std::vector<double> x;
  x.reserve(y.size());
  for (const auto& blk : stack) x.insert(x.end(), blk.len, blk.mean());
  for (std::size_t q = 1; q < x.size(); ++q)
    if (x[q] < x[q - 1]) x[q] = x[q - 1];  // guard against rounding in the block means
  return x;
}

/// Baseline part of the grouped pseudo log-likelihood:
/// sum_q b_q [nbar_q log L_q - V_q L_q], with 0 log 0 = 0.
/// Returns -inf when some L_q = 0 while nbar_q > 0.
inline double baseline_objective(const GroupedStats& stats, std::span<const double> exposure,
                                 std::span<const double> values) {
  double total = 0.0;
  for (std::size_t q = 0; q < stats.size(); ++q) {
    const double bq = static_cast<double>(stats.b[q]);
    if (stats.nbar[q] > 0.0) {
      if (values[q] <= 0.0) return -std::numeric_limits<double>::infinity();
      total += bq * stats.nbar[q] * std::log(values[q]);
    }
    total -= bq * exposure[q] * values[q];
  }
  return total;
}

/// Maximizes the baseline objective over non-decreasing non-negative sequences.
/// `exposure[q]` is the member mean of exp(beta'z) at the q-th distinct time.
inline StepFunction solve_baseline(const GroupedStats& stats, std::span<const double> exposure) {
  const std::size_t r = stats.size();
  if (exposure.size() != r)
    throw std::invalid_argument("solve_baseline: exposure has length " +
                                std::to_string(exposure.size()) + ", expected " +
                                std::to_string(r));
  std::vector<double> y(r), w(r);
  for (std::size_t q = 0; q < r; ++q) {
    if (!(exposure[q] > 0.0) || !std::isfinite(exposure[q]))
      throw NumericError("solve_baseline: exposure at time " + detail::exact_real(stats.times[q]) +
                         " is not positive and finite");
    y[q] = stats.nbar[q] / exposure[q];
    w[q] = static_cast<double>(stats.b[q]) * exposure[q];
  }
  StepFunction fn{stats.times, weighted_isotonic(y, w)};
  for (double& v : fn.values) v = std::max(v, 0.0);
  return fn;
}

}  // namespace pcmm
