#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcmm/detail/parallel.hpp"
#include "pcmm/errors.hpp"
#include "pcmm/estimator.hpp"
#include "pcmm/panel_data.hpp"

namespace pcmm {

enum class InferenceMethod { bootstrap, sandwich };

inline const char* to_string(InferenceMethod m) {
  return m == InferenceMethod::bootstrap ? "bootstrap" : "sandwich";
}

struct InferenceResult {
  std::size_t cause = 0;
  InferenceMethod method = InferenceMethod::bootstrap;
  std::vector<double> beta;  ///< point estimate the p-values refer to
  std::vector<double> se;
  Eigen::MatrixXd cov;
  std::vector<double> wald_p;
  std::size_t replicates = 0;  ///< successful bootstrap refits
  std::size_t failed = 0;      ///< bootstrap refits that did not converge
};

namespace detail {

/// Two-sided normal-reference p-value for beta / se.
inline double wald_p_value(double beta, double se) {
  if (se <= 0.0) return beta == 0.0 ? 1.0 : 0.0;
  return std::erfc(std::abs(beta / se) / std::sqrt(2.0));
}

inline void finish(InferenceResult& res) {
  res.cov = 0.5 * (res.cov + res.cov.transpose());
  const auto d = static_cast<std::size_t>(res.cov.rows());
  res.se.resize(d);
  res.wald_p.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    const double v = res.cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    res.se[c] = std::sqrt(std::max(v, 0.0));
    res.wald_p[c] = wald_p_value(res.beta[c], res.se[c]);
  }
}

inline PanelDataset resample(const PanelDataset& data, std::mt19937_64& rng) {
  PanelDataset out;
  out.causes = data.causes;
  out.dim = data.dim;
  out.subjects.reserve(data.size());
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t i = 0; i < data.size(); ++i) out.subjects.push_back(data.subjects[pick(rng)]);
  return out;
}

}  // namespace detail

/// Nonparametric bootstrap over subjects around the given point estimates.
/// Replicate b draws from substream (seed, b); non-converged refits are
/// dropped per cause and counted in `failed`.
inline std::vector<InferenceResult> bootstrap_se(const PanelDataset& data,
                                                 const std::vector<CauseFit>& point,
                                                 const FitConfig& cfg, std::size_t replicates,
                                                 std::uint64_t seed, unsigned max_threads = 0) {
  if (replicates < 2) throw std::invalid_argument("bootstrap_se: need at least 2 replicates");
  if (data.dim == 0) throw std::invalid_argument("bootstrap_se: dataset has no covariates");
  if (point.size() != data.causes) throw std::invalid_argument("bootstrap_se: one fit per cause required");

  struct Draw {
    std::vector<std::vector<double>> beta;
    std::vector<bool> ok;
  };
  std::vector<Draw> draws(replicates);
  detail::parallel_for(
      replicates,
      [&](std::size_t b) {
        auto rng = detail::substream(seed, b);
        const auto sample = detail::resample(data, rng);
        const auto fits = fit(sample, cfg);
        draws[b].beta.resize(data.causes);
        draws[b].ok.resize(data.causes);
        for (std::size_t j = 0; j < data.causes; ++j) {
          draws[b].ok[j] = fits[j].converged();
          draws[b].beta[j] = fits[j].beta;
        }
      },
      max_threads);

  const auto d = static_cast<Eigen::Index>(data.dim);
  std::vector<InferenceResult> out;
  for (std::size_t j = 0; j < data.causes; ++j) {
    InferenceResult res;
    res.cause = j;
    res.method = InferenceMethod::bootstrap;
    res.beta = point[j].beta;
    std::vector<Eigen::VectorXd> kept;
    for (const auto& dr : draws) {
      if (dr.ok[j]) kept.push_back(detail::as_vector(dr.beta[j]));
      else ++res.failed;
    }
    res.replicates = kept.size();
    if (kept.size() < 2)
      throw InferenceError("bootstrap_se: cause " + std::to_string(j + 1) + " has only " +
                           std::to_string(kept.size()) + " converged replicates");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& k : kept) mean += k;
    mean /= static_cast<double>(kept.size());
    res.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& k : kept) res.cov += (k - mean) * (k - mean).transpose();
    res.cov /= static_cast<double>(kept.size() - 1);
    if (res.beta.size() != data.dim) res.beta = std::vector<double>(mean.data(), mean.data() + d);
    detail::finish(res);
    out.push_back(std::move(res));
  }
  return out;
}

/// Fits the data, then bootstraps around that fit.
inline std::vector<InferenceResult> bootstrap_se(const PanelDataset& data, const FitConfig& cfg,
                                                 std::size_t replicates, std::uint64_t seed,
                                                 unsigned max_threads = 0) {
  return bootstrap_se(data, fit(data, cfg), cfg, replicates, seed, max_threads);
}

/// Plug-in robust covariance S^-1 T S^-1 / n for one cause, where, with
/// R(s_q) the exp(beta'z)-weighted mean covariate of subjects seen near s_q,
///   S = (1/n) sum_i sum_p L(T_ip) e^{beta'z_i} (z_i - R_ip)(z_i - R_ip)'
///   T = (1/n) sum_i u_i u_i',  u_i = sum_p (N_ip - L(T_ip) e^{beta'z_i}) (z_i - R_ip).
/// R(s_q) pools the members of s_q and, when they number fewer than
/// `min_pool` (default ceil(sqrt(n))), those of the nearest distinct times
/// until the pool is large enough. With heavily tied times this is the exact
/// per-time ratio; with continuous times it is a nearest-neighbour smoother,
/// without which R equals z_i and S vanishes.
inline InferenceResult sandwich_se(const PanelDataset& data, const CauseFit& fit,
                                   std::size_t min_pool = 0) {
  if (data.dim == 0) throw std::invalid_argument("sandwich_se: dataset has no covariates");
  if (fit.beta.size() != data.dim) throw std::invalid_argument("sandwich_se: fit has the wrong dimension");
  const auto stats = aggregate(data, fit.cause);
  const auto d = static_cast<Eigen::Index>(data.dim);
  const auto z = detail::covariate_matrix(data);
  const Eigen::VectorXd risk = (z * detail::as_vector(fit.beta)).array().exp();
  if (min_pool == 0) min_pool = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(data.size()))));

  const std::size_t r = stats.size();
  std::vector<Eigen::VectorXd> num(r, Eigen::VectorXd::Zero(d));
  std::vector<double> den(r, 0.0);
  for (std::size_t q = 0; q < r; ++q)
    for (const auto& m : stats.members[q]) {
      const auto i = static_cast<Eigen::Index>(m.subject);
      num[q] += risk[i] * z.row(i).transpose();
      den[q] += risk[i];
    }

  std::vector<Eigen::VectorXd> ratio(r);
  for (std::size_t q = 0; q < r; ++q) {
    Eigen::VectorXd top = num[q];
    double bottom = den[q];
    std::size_t pooled = stats.b[q], lo = q, hi = q + 1;  // window [lo, hi)
    while (pooled < min_pool && (lo > 0 || hi < r)) {
      const bool take_low =
          hi == r || (lo > 0 && stats.times[q] - stats.times[lo - 1] <= stats.times[hi] - stats.times[q]);
      const std::size_t k = take_low ? --lo : hi++;
      top += num[k];
      bottom += den[k];
      pooled += stats.b[k];
    }
    ratio[q] = top / bottom;
  }

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    for (std::size_t p = 0; p < s.visits(); ++p) {
      const double mu = detail::at_knot(fit.baseline, s.times[p]) * risk[row];
      const Eigen::VectorXd centred = z.row(row).transpose() - ratio[stats.slot[i][p]];
      sigma += mu * centred * centred.transpose();
      u += (static_cast<double>(s.counts[fit.cause][p]) - mu) * centred;
    }
    theta += u * u.transpose();
  }
  const double n = static_cast<double>(data.size());
  sigma /= n;
  theta /= n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  const auto& ev = eig.eigenvalues();
  if (!(ev.maxCoeff() > 0.0) || ev.minCoeff() <= 1e-10 * ev.maxCoeff())
    throw NumericError("sandwich_se: information matrix is singular; covariates do not vary "
                       "among subjects observed at the same times");
  const Eigen::MatrixXd inv =
      eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

  InferenceResult res;
  res.cause = fit.cause;
  res.method = InferenceMethod::sandwich;
  res.beta = fit.beta;
  res.cov = inv * theta * inv / n;
  detail::finish(res);
  return res;
}

}  // namespace pcmm
