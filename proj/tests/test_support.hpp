#pragma once
//
// Test-only oracles. Each one recomputes a quantity by the most direct route
// available (enumeration, double loops, finite differences) and shares no
// code with the library path it checks.
//

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "pcmm/panel_data.hpp"

namespace pcmm::oracle {

/// x_q = max_{a<=q} min_{b>=q} (sum_{a..b} w y / sum_{a..b} w).
inline std::vector<double> max_min_isotonic(const std::vector<double>& y, const std::vector<double>& w) {
  const std::size_t r = y.size();
  std::vector<double> x(r);
  for (std::size_t q = 0; q < r; ++q) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a <= q; ++a) {
      double inner = std::numeric_limits<double>::infinity();
      for (std::size_t b = q; b < r; ++b) {
        double num = 0.0, den = 0.0;
        for (std::size_t l = a; l <= b; ++l) {
          num += w[l] * y[l];
          den += w[l];
        }
        inner = std::min(inner, num / den);
      }
      best = std::max(best, inner);
    }
    x[q] = best;
  }
  return x;
}

/// sum_q b_q [nbar_q log L_q - V_q L_q] written out directly.
inline double naive_baseline_objective(const std::vector<double>& b, const std::vector<double>& nbar,
                                       const std::vector<double>& v, const std::vector<double>& lam) {
  double total = 0.0;
  for (std::size_t q = 0; q < b.size(); ++q) {
    if (nbar[q] > 0.0) {
      if (lam[q] <= 0.0) return -std::numeric_limits<double>::infinity();
      total += b[q] * nbar[q] * std::log(lam[q]);
    }
    total -= b[q] * v[q] * lam[q];
  }
  return total;
}

/// Best objective over all non-decreasing sequences drawn from `levels`.
inline double best_on_monotone_grid(const std::vector<double>& levels,
                                    const std::function<double(const std::vector<double>&)>& objective,
                                    std::size_t r, std::vector<double>* argmax = nullptr) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> cur(r);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t q, std::size_t from) {
    if (q == r) {
      const double val = objective(cur);
      if (val > best) {
        best = val;
        if (argmax) *argmax = cur;
      }
      return;
    }
    for (std::size_t l = from; l < levels.size(); ++l) {
      cur[q] = levels[l];
      rec(q + 1, l);
    }
  };
  rec(0, 0);
  return best;
}

/// Baseline at time t by linear scan over (knot, value) pairs; NaN when t is
/// not a knot.
inline double lookup(const std::vector<double>& knots, const std::vector<double>& values, double t) {
  for (std::size_t q = 0; q < knots.size(); ++q)
    if (knots[q] == t) return values[q];
  return std::numeric_limits<double>::quiet_NaN();
}

/// Pseudo log-likelihood term by term, one observation at a time.
inline double naive_loglik(const PanelDataset& data, std::size_t cause, const std::vector<double>& beta,
                           const std::vector<double>& knots, const std::vector<double>& values) {
  double total = 0.0;
  for (const auto& s : data.subjects) {
    for (std::size_t p = 0; p < s.times.size(); ++p) {
      double eta = 0.0;
      for (std::size_t c = 0; c < beta.size(); ++c) eta += beta[c] * s.covariates[c];
      const double lam = lookup(knots, values, s.times[p]);
      const double n = static_cast<double>(s.counts[cause][p]);
      const double log_term = n == 0.0 ? 0.0 : n * std::log(lam);
      total += log_term + n * eta - lam * std::exp(eta);
    }
  }
  return total;
}

struct TimeTally {
  std::vector<double> times;
  std::vector<std::size_t> b;
  std::vector<double> nbar;
};

/// Distinct times with counts and means by a two-loop scan over all observations.
inline TimeTally brute_force_tally(const PanelDataset& data, std::size_t cause) {
  std::vector<double> distinct;
  for (const auto& s : data.subjects)
    for (double t : s.times)
      if (std::find(distinct.begin(), distinct.end(), t) == distinct.end()) distinct.push_back(t);
  std::sort(distinct.begin(), distinct.end());
  TimeTally tally{distinct, {}, {}};
  for (double t : distinct) {
    std::size_t count = 0;
    double sum = 0.0;
    for (const auto& s : data.subjects)
      for (std::size_t p = 0; p < s.times.size(); ++p)
        if (s.times[p] == t) {
          ++count;
          sum += static_cast<double>(s.counts[cause][p]);
        }
    tally.b.push_back(count);
    tally.nbar.push_back(sum / static_cast<double>(count));
  }
  return tally;
}

struct RandomPanelOptions {
  std::size_t min_subjects = 2;
  std::size_t max_subjects = 8;
  std::size_t causes = 1;
  std::size_t dim = 1;
  int max_visits = 4;
  int time_levels = 6;  ///< times drawn from {1..time_levels}, so ties across subjects are common
};

/// Small random dataset with integer times (plenty of ties) and cumulative counts.
inline PanelDataset random_panel(std::mt19937_64& rng, const RandomPanelOptions& opt = {}) {
  PanelDataset data;
  data.causes = opt.causes;
  data.dim = opt.dim;
  const auto n = std::uniform_int_distribution<std::size_t>(opt.min_subjects, opt.max_subjects)(rng);
  std::uniform_real_distribution<double> cov(-1.0, 1.0);
  std::poisson_distribution<int> inc(1.5);
  for (std::size_t i = 0; i < n; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i);
    const int m = std::uniform_int_distribution<int>(1, std::min(opt.max_visits, opt.time_levels))(rng);
    std::vector<int> pool(static_cast<std::size_t>(opt.time_levels));
    for (int t = 0; t < opt.time_levels; ++t) pool[static_cast<std::size_t>(t)] = t + 1;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(m));
    std::sort(pool.begin(), pool.end());
    for (int t : pool) s.times.push_back(static_cast<double>(t));
    for (std::size_t c = 0; c < opt.dim; ++c) s.covariates.push_back(cov(rng));
    s.counts.assign(opt.causes, {});
    for (std::size_t j = 0; j < opt.causes; ++j) {
      Count cum = 0;
      for (int p = 0; p < m; ++p) {
        cum += inc(rng);
        s.counts[j].push_back(cum);
      }
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

}  // namespace pcmm::oracle
