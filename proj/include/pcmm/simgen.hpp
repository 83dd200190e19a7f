#pragma once
//
// Synthetic two-mode panel count data: a Bernoulli and a Normal covariate,
// a random visit schedule, and correlated Poisson increments between visits
// built by trivariate reduction (shared common-shock component).
//

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcmm/detail/parallel.hpp"
#include "pcmm/errors.hpp"
#include "pcmm/estimator.hpp"
#include "pcmm/panel_data.hpp"

namespace pcmm {

/// Baseline cumulative mean of the form scale * t^power.
struct PowerBaseline {
  double scale = 1.0;
  double power = 1.0;

  double operator()(double t) const { return scale * std::pow(t, power); }

  /// Parses "t", "2t", "2*t", "0.5t^2", "3*t^1.5".
  static PowerBaseline parse(std::string_view text) {
    std::string s;
    for (char c : text)
      if (c != ' ') s.push_back(c);
    auto tpos = s.find('t');
    if (tpos == std::string::npos || s.find('t', tpos + 1) != std::string::npos)
      throw std::invalid_argument("baseline '" + std::string(text) + "' must look like c*t^p");
    PowerBaseline out;
    std::string coef = s.substr(0, tpos);
    if (!coef.empty() && coef.back() == '*') coef.pop_back();
    if (!coef.empty()) {
      auto v = detail::parse_real(coef);
      if (!v || *v <= 0.0) throw std::invalid_argument("bad baseline scale in '" + std::string(text) + "'");
      out.scale = *v;
    }
    std::string rest = s.substr(tpos + 1);
    if (!rest.empty()) {
      if (rest.front() != '^') throw std::invalid_argument("bad baseline '" + std::string(text) + "'");
      auto v = detail::parse_real(rest.substr(1));
      if (!v || *v <= 0.0) throw std::invalid_argument("bad baseline power in '" + std::string(text) + "'");
      out.power = *v;
    }
    return out;
  }

  std::string to_string() const {
    std::string s = scale == 1.0 ? "" : detail::exact_real(scale);
    s += "t";
    if (power != 1.0) s += "^" + detail::exact_real(power);
    return s;
  }
};

struct SimConfig {
  std::size_t n = 200;
  std::array<double, 2> beta1{0.5, 1.0};
  std::array<double, 2> beta2{-1.0, 0.5};
  PowerBaseline baseline1{1.0, 1.0};
  PowerBaseline baseline2{2.0, 1.0};
  double rho = 0.5;
  int max_visits = 5;
  double gap_min = 1.0;
  double gap_max = 5.0;
  double bernoulli_p = 0.5;
  double normal_sd = 0.5;
  std::size_t replications = 500;
  std::uint64_t seed = 42;
  FitConfig fit;

  void check() const {
    if (n < 1) throw std::invalid_argument("SimConfig: n must be at least 1");
    if (rho < 0.0) throw std::invalid_argument("SimConfig: rho must be non-negative");
    if (max_visits < 1) throw std::invalid_argument("SimConfig: max_visits must be at least 1");
    if (!(gap_min > 0.0) || gap_max < gap_min)
      throw std::invalid_argument("SimConfig: need 0 < gap_min <= gap_max");
    if (bernoulli_p < 0.0 || bernoulli_p > 1.0)
      throw std::invalid_argument("SimConfig: bernoulli_p must lie in [0, 1]");
    if (normal_sd < 0.0) throw std::invalid_argument("SimConfig: normal_sd must be non-negative");
  }

  const std::array<double, 2>& beta(std::size_t cause) const { return cause == 0 ? beta1 : beta2; }
};

struct Schedule {
  int visits = 0;
  std::vector<double> times;
};

/// M ~ U{1..max_visits}; times are cumulative sums of U(gap_min, gap_max) gaps
/// starting from 0, so the first visit happens at the first gap.
template <typename Rng>
Schedule gen_schedule(Rng& rng, int max_visits = 5, double gap_min = 1.0, double gap_max = 5.0) {
  Schedule s;
  s.visits = std::uniform_int_distribution<int>(1, max_visits)(rng);
  std::uniform_real_distribution<double> gap(gap_min, gap_max);
  double t = 0.0;
  for (int p = 0; p < s.visits; ++p) {
    t += gap(rng);
    s.times.push_back(t);
  }
  return s;
}

struct BivPoisDraw {
  Count first = 0;
  Count second = 0;
  bool clamped = false;  ///< rho exceeded min(lambda1, lambda2) and was reduced
};

namespace detail {
template <typename Rng>
Count poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<Count>(mean)(rng);
}
}  // namespace detail

/// Bivariate Poisson pair with marginal means (lambda1, lambda2) and
/// covariance rho: (X1 + X0, X2 + X0) with X0 ~ Poisson(rho).
template <typename Rng>
BivPoisDraw gen_bivpois(double lambda1, double lambda2, double rho, Rng& rng) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(rho >= 0.0))
    throw std::invalid_argument("gen_bivpois: rates must be non-negative");
  BivPoisDraw d;
  const double cap = std::min(lambda1, lambda2);
  if (rho > cap) {
    rho = cap;
    d.clamped = true;
  }
  const Count shared = detail::poisson(rho, rng);
  d.first = detail::poisson(lambda1 - rho, rng) + shared;
  d.second = detail::poisson(lambda2 - rho, rng) + shared;
  return d;
}

struct SimulatedData {
  PanelDataset data;
  std::size_t clamped_draws = 0;
};

template <typename Rng>
SimulatedData simulate(const SimConfig& cfg, Rng& rng) {
  cfg.check();
  SimulatedData out;
  out.data.causes = 2;
  out.data.dim = 2;
  out.data.subjects.reserve(cfg.n);
  std::bernoulli_distribution binary(cfg.bernoulli_p);
  std::normal_distribution<double> normal(0.0, cfg.normal_sd);
  const std::array<PowerBaseline, 2> base{cfg.baseline1, cfg.baseline2};

  for (std::size_t i = 0; i < cfg.n; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    s.covariates = {binary(rng) ? 1.0 : 0.0, normal(rng)};
    const auto sched = gen_schedule(rng, cfg.max_visits, cfg.gap_min, cfg.gap_max);
    s.times = sched.times;
    std::array<double, 2> risk{};
    for (std::size_t j = 0; j < 2; ++j)
      risk[j] = std::exp(cfg.beta(j)[0] * s.covariates[0] + cfg.beta(j)[1] * s.covariates[1]);
    s.counts.assign(2, {});
    std::array<Count, 2> cum{0, 0};
    double prev = 0.0;
    for (double t : s.times) {
      // Increment of the baseline over the gap; equals L0(t - prev) for linear baselines.
      const double l1 = (base[0](t) - base[0](prev)) * risk[0];
      const double l2 = (base[1](t) - base[1](prev)) * risk[1];
      const auto draw = gen_bivpois(l1, l2, cfg.rho, rng);
      out.clamped_draws += draw.clamped ? 1 : 0;
      cum[0] += draw.first;
      cum[1] += draw.second;
      s.counts[0].push_back(cum[0]);
      s.counts[1].push_back(cum[1]);
      prev = t;
    }
    out.data.subjects.push_back(std::move(s));
  }
  return out;
}

template <typename Rng>
PanelDataset gen_dataset(const SimConfig& cfg, Rng& rng) {
  return simulate(cfg, rng).data;
}

/// Absolute bias and MSE of the coefficient estimates over replications.
/// Index [cause][coefficient].
struct StudyResult {
  SimConfig config;
  std::array<std::array<double, 2>, 2> bias{};
  std::array<std::array<double, 2>, 2> mse{};
  std::array<std::array<double, 2>, 2> mean_estimate{};
  std::size_t replications = 0;
  std::size_t used = 0;
  std::size_t failed = 0;
  std::size_t clamped_draws = 0;
  std::size_t trace_violations = 0;  ///< fits whose objective trace decreased
  /// estimates[r][cause][coef] for each used replicate, in replicate order.
  std::vector<std::array<std::array<double, 2>, 2>> estimates;
};

/// Simulate, fit and summarize `cfg.replications` datasets. Replicate r uses
/// the generator substream (seed, r), so results are reproducible and do not
/// depend on the thread count.
inline StudyResult run_study(const SimConfig& cfg, unsigned max_threads = 0) {
  cfg.check();
  if (cfg.replications < 1) throw std::invalid_argument("run_study: replications must be at least 1");

  struct Replicate {
    bool ok = false;
    std::array<std::array<double, 2>, 2> beta{};
    std::size_t clamps = 0;
    bool ascending = true;
  };
  std::vector<Replicate> reps(cfg.replications);
  detail::parallel_for(
      cfg.replications,
      [&](std::size_t r) {
        auto rng = detail::substream(cfg.seed, r);
        auto sim = simulate(cfg, rng);
        reps[r].clamps = sim.clamped_draws;
        const auto fits = fit(sim.data, cfg.fit);
        bool ok = true;
        for (std::size_t j = 0; j < 2; ++j) {
          ok = ok && fits[j].converged();
          reps[r].ascending = reps[r].ascending && is_ascending(fits[j].loglik_trace);
          if (fits[j].beta.size() == 2) reps[r].beta[j] = {fits[j].beta[0], fits[j].beta[1]};
        }
        reps[r].ok = ok;
      },
      max_threads);

  StudyResult res;
  res.config = cfg;
  res.replications = cfg.replications;
  for (const auto& r : reps) {
    res.clamped_draws += r.clamps;
    res.trace_violations += r.ascending ? 0 : 1;
    if (!r.ok) {
      ++res.failed;
      continue;
    }
    res.estimates.push_back(r.beta);
  }
  res.used = res.estimates.size();
  if (res.failed * 10 > res.replications)
    throw StudyError("run_study: " + std::to_string(res.failed) + " of " +
                     std::to_string(res.replications) + " replicates failed to converge");
  if (res.used == 0) throw StudyError("run_study: no replicate converged");

  const double m = static_cast<double>(res.used);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t c = 0; c < 2; ++c) {
      double sum = 0.0, sq = 0.0;
      for (const auto& e : res.estimates) {
        const double err = e[j][c] - cfg.beta(j)[c];
        sum += e[j][c];
        sq += err * err;
      }
      res.mean_estimate[j][c] = sum / m;
      res.bias[j][c] = std::abs(res.mean_estimate[j][c] - cfg.beta(j)[c]);
      res.mse[j][c] = sq / m;
    }
  }
  return res;
}

}  // namespace pcmm
