#pragma once
//
// Maximum pseudo-likelihood estimation of the proportional mean model
//   E[N_j(t) | z] = L_0j(t) exp(beta_j' z),   j = 1..k,
// treating each cumulative count as Poisson with that mean. The causes
// separate, and each one is fitted by alternating an isotonic update of the
// baseline with a Newton update of beta.
//

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcmm/errors.hpp"
#include "pcmm/isotonic.hpp"
#include "pcmm/panel_data.hpp"

namespace pcmm {

struct FitConfig {
  std::vector<double> beta_init;  ///< empty means all zeros
  double epsilon = 1e-5;          ///< relative change in the objective between sweeps
  int max_iter = 200;
  int newton_max_iter = 50;
  double newton_tol = 1e-8;  ///< gradient norm
  int max_halvings = 30;
  /// Any |beta'z_i| above this during a Newton update is reported as divergence.
  double max_linear_predictor = 15.0;

  void check(std::size_t dim) const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("FitConfig: epsilon must be positive");
    if (max_iter < 1 || newton_max_iter < 1)
      throw std::invalid_argument("FitConfig: iteration limits must be at least 1");
    if (!beta_init.empty() && beta_init.size() != dim)
      throw std::invalid_argument("FitConfig: beta_init has length " +
                                  std::to_string(beta_init.size()) + ", expected " +
                                  std::to_string(dim));
  }

  std::vector<double> initial_beta(std::size_t dim) const {
    return beta_init.empty() ? std::vector<double>(dim, 0.0) : beta_init;
  }
};

enum class FitStatus { converged, max_iter, failed };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iter: return "max_iter";
    case FitStatus::failed: return "failed";
  }
  return "unknown";
}

struct CauseFit {
  std::size_t cause = 0;
  std::vector<double> beta;
  StepFunction baseline;
  std::vector<double> loglik_trace;
  int iterations = 0;
  FitStatus status = FitStatus::failed;
  std::string message;  ///< diagnostic for failed fits

  bool converged() const noexcept { return status == FitStatus::converged; }
};

/// Value, gradient and Hessian of the fixed-baseline objective in beta.
struct BetaObjective {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

namespace detail {

inline Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline Eigen::MatrixXd covariate_matrix(const PanelDataset& data) {
  Eigen::MatrixXd z(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(data.dim));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t c = 0; c < data.dim; ++c)
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = data.subjects[i].covariates[c];
  return z;
}

/// Baseline value at an observation time that must be one of the knots.
inline double at_knot(const StepFunction& fn, double t) {
  auto it = std::lower_bound(fn.knots.begin(), fn.knots.end(), t);
  if (it == fn.knots.end() || *it != t)
    throw std::invalid_argument("baseline has no knot at observation time " + exact_real(t));
  return fn.values[static_cast<std::size_t>(it - fn.knots.begin())];
}

/// Per-subject sums over visits of N and of L(T); the beta objective only
/// needs these: g(beta) = sum_i [SN_i beta'z_i - SL_i exp(beta'z_i)].
struct SubjectTotals {
  Eigen::VectorXd counts;
  Eigen::VectorXd baseline;
};

inline SubjectTotals subject_totals(const PanelDataset& data, std::size_t cause,
                                    const StepFunction& baseline) {
  SubjectTotals tot{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size())),
                    Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size()))};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    for (std::size_t p = 0; p < s.visits(); ++p) {
      tot.counts[static_cast<Eigen::Index>(i)] += static_cast<double>(s.counts[cause][p]);
      tot.baseline[static_cast<Eigen::Index>(i)] += at_knot(baseline, s.times[p]);
    }
  }
  return tot;
}

inline BetaObjective beta_objective(const Eigen::MatrixXd& z, const SubjectTotals& tot,
                                    const Eigen::VectorXd& beta, bool derivatives = true) {
  const Eigen::VectorXd eta = z * beta;
  const Eigen::VectorXd mu = tot.baseline.array() * eta.array().exp();
  BetaObjective obj;
  obj.value = tot.counts.dot(eta) - mu.sum();
  if (derivatives) {
    obj.gradient = z.transpose() * (tot.counts - mu);
    obj.hessian = -(z.transpose() * mu.asDiagonal() * z);
  }
  return obj;
}

/// Full objective using the precomputed slot map; beta'z and L per observation.
inline double grouped_loglik_fast(const PanelDataset& data, const GroupedStats& stats,
                                  const std::vector<double>& beta, const StepFunction& baseline) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const double eta = s.linear_predictor(beta);
    const double risk = std::exp(eta);
    for (std::size_t p = 0; p < s.visits(); ++p) {
      const double lam = baseline.values[stats.slot[i][p]];
      const double n = static_cast<double>(s.counts[stats.cause][p]);
      if (n > 0.0) {
        if (lam <= 0.0) return -std::numeric_limits<double>::infinity();
        total += n * std::log(lam) + n * eta;
      }
      total -= lam * risk;
    }
  }
  return total;
}

}  // namespace detail

/// Pseudo log-likelihood of one cause evaluated subject by subject:
/// sum_i sum_p [N log L(T) + N beta'z - L(T) exp(beta'z)], 0 log 0 = 0.
inline double log_pseudo_likelihood(const PanelDataset& data, std::size_t cause,
                                    std::span<const double> beta, const StepFunction& baseline) {
  if (cause >= data.causes) throw std::invalid_argument("cause index out of range");
  if (beta.size() != data.dim) throw std::invalid_argument("beta has the wrong length");
  double total = 0.0;
  bool impossible = false;
  for (const auto& s : data.subjects) {
    const double eta = s.linear_predictor(beta);
    for (std::size_t p = 0; p < s.visits(); ++p) {
      const double lam = detail::at_knot(baseline, s.times[p]);
      const double n = static_cast<double>(s.counts[cause][p]);
      if (n > 0.0) {
        if (lam <= 0.0) impossible = true;
        else total += n * std::log(lam) + n * eta;
      }
      total -= lam * std::exp(eta);
    }
  }
  return impossible ? -std::numeric_limits<double>::infinity() : total;
}

/// Member mean of exp(beta'z) at each distinct time.
inline std::vector<double> exposure(const PanelDataset& data, const GroupedStats& stats,
                                    std::span<const double> beta) {
  std::vector<double> risk(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    risk[i] = std::exp(data.subjects[i].linear_predictor(beta));
  std::vector<double> v(stats.size());
  for (std::size_t q = 0; q < stats.size(); ++q) {
    double sum = 0.0;
    for (const auto& m : stats.members[q]) sum += risk[m.subject];
    v[q] = sum / static_cast<double>(stats.b[q]);
  }
  return v;
}

/// Member mean of N * beta'z at each distinct time. This is the term that
/// makes the grouped objective equal the subject-by-subject one.
inline std::vector<double> linear_term(const PanelDataset& data, const GroupedStats& stats,
                                       std::span<const double> beta) {
  std::vector<double> w(stats.size());
  for (std::size_t q = 0; q < stats.size(); ++q) {
    double sum = 0.0;
    for (const auto& m : stats.members[q]) {
      const auto& s = data.subjects[m.subject];
      sum += static_cast<double>(s.counts[stats.cause][m.visit]) * s.linear_predictor(beta);
    }
    w[q] = sum / static_cast<double>(stats.b[q]);
  }
  return w;
}

/// The same objective evaluated from grouped statistics:
/// sum_q b_q [nbar_q log L(s_q) - V_q L(s_q) + W_q].
inline double grouped_log_likelihood(const PanelDataset& data, const GroupedStats& stats,
                                     std::span<const double> beta, const StepFunction& baseline) {
  const auto v = exposure(data, stats, beta);
  const auto w = linear_term(data, stats, beta);
  double total = baseline_objective(stats, v, baseline.values);
  for (std::size_t q = 0; q < stats.size(); ++q) total += static_cast<double>(stats.b[q]) * w[q];
  return total;
}

/// Fixed-baseline objective in beta with analytic derivatives.
inline BetaObjective beta_objective(const PanelDataset& data, std::size_t cause,
                                    const StepFunction& baseline, std::span<const double> beta) {
  const auto z = detail::covariate_matrix(data);
  const auto tot = detail::subject_totals(data, cause, baseline);
  return detail::beta_objective(z, tot, Eigen::Map<const Eigen::VectorXd>(
                                            beta.data(), static_cast<Eigen::Index>(beta.size())));
}

/// Maximizes the concave fixed-baseline objective in beta by damped Newton.
inline std::vector<double> beta_step(const PanelDataset& data, std::size_t cause,
                                     const StepFunction& baseline,
                                     std::span<const double> beta_start, const FitConfig& cfg) {
  if (data.dim == 0) throw std::invalid_argument("beta_step: dataset has no covariates");
  if (beta_start.size() != data.dim) throw std::invalid_argument("beta_step: beta has the wrong length");
  const auto z = detail::covariate_matrix(data);
  const auto tot = detail::subject_totals(data, cause, baseline);

  Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(beta_start.data(),
                                                           static_cast<Eigen::Index>(beta_start.size()));
  auto to_std = [](const Eigen::VectorXd& b) { return std::vector<double>(b.data(), b.data() + b.size()); };

  for (int it = 0; it < cfg.newton_max_iter; ++it) {
    const auto obj = detail::beta_objective(z, tot, beta);
    // A singular Hessian means beta is not identified, even at a stationary point.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-obj.hessian);
    const auto& ev = eig.eigenvalues();
    if (!(ev.maxCoeff() > 0.0) || ev.minCoeff() <= 1e-12 * ev.maxCoeff())
      throw NumericError("beta_step: singular Hessian; covariates are collinear or constant "
                         "over subjects with positive baseline, or the cause has no events");
    if (obj.gradient.norm() <= cfg.newton_tol) return to_std(beta);
    const Eigen::VectorXd step = eig.eigenvectors() *
                                 (eig.eigenvectors().transpose() * obj.gradient).cwiseQuotient(ev);
    // Predicted gain below the precision of the objective: a line search cannot
    // resolve it, so take the full step, which is quadratically convergent here.
    if (0.5 * obj.gradient.dot(step) <= 1e-13 * std::max(1.0, std::abs(obj.value))) {
      beta += step;
      if (detail::beta_objective(z, tot, beta, true).gradient.norm() <= cfg.newton_tol) return to_std(beta);
      continue;
    }

    double scale = 1.0;
    bool ascended = false;
    for (int h = 0; h <= cfg.max_halvings && !ascended; ++h, scale *= 0.5) {
      const Eigen::VectorXd next = beta + scale * step;
      const double val = detail::beta_objective(z, tot, next, false).value;
      if (std::isfinite(val) && val >= obj.value) {
        beta = next;
        ascended = true;
      }
    }
    // No ascent along the Newton direction: beta is optimal to working precision.
    if (!ascended) return to_std(beta);
    const double eta_max = (z * beta).cwiseAbs().maxCoeff();
    if (!std::isfinite(eta_max) || eta_max > cfg.max_linear_predictor)
      throw ConvergenceError("beta_step: diverging; |beta'z| reached " + detail::exact_real(eta_max) +
                                 " (the maximizer is at infinity)",
                             to_std(beta));
  }
  throw ConvergenceError("beta_step: Newton did not reach gradient tolerance in " +
                             std::to_string(cfg.newton_max_iter) + " iterations",
                         to_std(beta));
}

/// Profile maximizer of the baseline at fixed beta.
inline StepFunction baseline_step(const PanelDataset& data, const GroupedStats& stats,
                                  std::span<const double> beta) {
  return solve_baseline(stats, exposure(data, stats, beta));
}

inline StepFunction baseline_step(const PanelDataset& data, std::size_t cause,
                                  std::span<const double> beta) {
  return baseline_step(data, aggregate(data, cause), beta);
}

/// Fits one cause; throws on beta_step failure.
inline CauseFit fit_cause(const PanelDataset& data, std::size_t cause, const FitConfig& cfg) {
  cfg.check(data.dim);
  const auto stats = aggregate(data, cause);
  CauseFit out;
  out.cause = cause;
  out.beta = cfg.initial_beta(data.dim);
  out.baseline = baseline_step(data, stats, out.beta);
  out.loglik_trace.push_back(detail::grouped_loglik_fast(data, stats, out.beta, out.baseline));

  if (data.dim == 0) {
    out.iterations = 1;
    out.status = FitStatus::converged;
    return out;
  }

  out.status = FitStatus::max_iter;
  for (int h = 1; h <= cfg.max_iter; ++h) {
    out.beta = beta_step(data, cause, out.baseline, out.beta, cfg);
    out.baseline = baseline_step(data, stats, out.beta);
    const double prev = out.loglik_trace.back();
    const double cur = detail::grouped_loglik_fast(data, stats, out.beta, out.baseline);
    out.loglik_trace.push_back(cur);
    out.iterations = h;
    const double change = std::abs(cur - prev);
    if (prev == 0.0 ? change <= cfg.epsilon : change <= cfg.epsilon * std::abs(prev)) {
      out.status = FitStatus::converged;
      break;
    }
  }
  return out;
}

/// Fits every cause independently. A failing cause is reported in its
/// CauseFit (status failed, message set) and does not stop the others.
inline std::vector<CauseFit> fit(const PanelDataset& data, const FitConfig& cfg = {}) {
  validate(data);
  cfg.check(data.dim);
  std::vector<CauseFit> fits;
  fits.reserve(data.causes);
  for (std::size_t j = 0; j < data.causes; ++j) {
    try {
      fits.push_back(fit_cause(data, j, cfg));
    } catch (const std::exception& e) {
      CauseFit failed;
      failed.cause = j;
      if (const auto* ce = dynamic_cast<const ConvergenceError*>(&e)) failed.beta = ce->last_iterate();
      failed.status = FitStatus::failed;
      failed.message = e.what();
      fits.push_back(std::move(failed));
    }
  }
  return fits;
}

/// True when no step of the objective trace decreases by more than
/// tol * max(1, |previous value|).
inline bool is_ascending(const std::vector<double>& trace, double tol = 1e-9) {
  for (std::size_t h = 1; h < trace.size(); ++h)
    if (trace[h] < trace[h - 1] - tol * std::max(1.0, std::abs(trace[h - 1]))) return false;
  return true;
}

/// L_0j(t) exp(beta_j'z).
inline double predict_mean(const CauseFit& fit, double t, std::span<const double> z) {
  if (z.size() != fit.beta.size()) throw std::invalid_argument("predict_mean: z has the wrong length");
  double eta = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) eta += fit.beta[c] * z[c];
  return fit.baseline(t) * std::exp(eta);
}

}  // namespace pcmm
