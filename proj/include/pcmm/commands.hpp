#pragma once
//
// Command implementations behind the `pcmm` executable. Each command takes a
// RunConfig, writes its artifacts into the output directory and returns a
// process exit code; diagnostics go to the supplied stream.
//

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcmm/errors.hpp"
#include "pcmm/estimator.hpp"
#include "pcmm/inference.hpp"
#include "pcmm/panel_data.hpp"
#include "pcmm/simgen.hpp"

namespace pcmm::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kNoConvergence = 3,
  kStudyFailed = 4,
};

enum class Command { fit, simulate, baseline };

struct RunConfig {
  Command command = Command::fit;
  std::string input;
  std::string out = ".";
  std::string config;  ///< study config (simulate)
  FitConfig fit;
  InferenceMethod inference = InferenceMethod::bootstrap;
  std::size_t boot_reps = 300;
  std::uint64_t seed = 42;
  std::optional<std::vector<double>> grid;  ///< baseline evaluation points
  std::optional<int> time_decimals;
  unsigned threads = 0;  ///< 0 = hardware concurrency
};

/// A study config file: one SimConfig plus the sample sizes to run it at.
struct StudyConfig {
  SimConfig sim;
  std::vector<std::size_t> sizes;
};

/// 6 significant digits, the precision of every derived number in CSV output.
inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (auto field : pcmm::detail::split_csv(text)) {
    auto v = pcmm::detail::parse_real(field);
    if (!v) throw std::invalid_argument("config key '" + key + "': bad number '" + std::string(field) + "'");
    out.push_back(*v);
  }
  return out;
}

inline std::array<double, 2> parse_pair(const std::string& key, const std::string& text) {
  auto v = parse_list(key, text);
  if (v.size() != 2) throw std::invalid_argument("config key '" + key + "' needs exactly two values");
  return {v[0], v[1]};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string baseline_file(std::size_t cause) {
  return "baseline_cause" + std::to_string(cause + 1) + ".csv";
}

}  // namespace detail

/// Reads a flat `key = value` study file. `n` and the coefficient vectors are
/// comma-separated lists. The seed is not configurable here; it comes from --seed.
inline StudyConfig load_study_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.line(), e.message());
  }
  StudyConfig cfg;
  cfg.sizes = {cfg.sim.n};
  for (const auto& [key, node] : tree) {
    if (!node.empty()) throw std::invalid_argument("config sections are not supported ('" + key + "')");
    const std::string value = node.data();
    auto real = [&] {
      auto v = pcmm::detail::parse_real(pcmm::detail::trim(value));
      if (!v) throw std::invalid_argument("config key '" + key + "': bad number '" + value + "'");
      return *v;
    };
    auto whole = [&] {
      const double v = real();
      if (v < 0 || v != std::floor(v))
        throw std::invalid_argument("config key '" + key + "' must be a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "n") {
      cfg.sizes.clear();
      for (double v : detail::parse_list(key, value)) {
        if (v < 1 || v != std::floor(v)) throw std::invalid_argument("config key 'n' must list positive integers");
        cfg.sizes.push_back(static_cast<std::size_t>(v));
      }
    } else if (key == "beta1") cfg.sim.beta1 = detail::parse_pair(key, value);
    else if (key == "beta2") cfg.sim.beta2 = detail::parse_pair(key, value);
    else if (key == "baseline1") cfg.sim.baseline1 = PowerBaseline::parse(value);
    else if (key == "baseline2") cfg.sim.baseline2 = PowerBaseline::parse(value);
    else if (key == "rho") cfg.sim.rho = real();
    else if (key == "max_visits") cfg.sim.max_visits = static_cast<int>(whole());
    else if (key == "gap_min") cfg.sim.gap_min = real();
    else if (key == "gap_max") cfg.sim.gap_max = real();
    else if (key == "bernoulli_p") cfg.sim.bernoulli_p = real();
    else if (key == "normal_sd") cfg.sim.normal_sd = real();
    else if (key == "replications") cfg.sim.replications = whole();
    else if (key == "epsilon") cfg.sim.fit.epsilon = real();
    else if (key == "max_iter") cfg.sim.fit.max_iter = static_cast<int>(whole());
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (cfg.sizes.empty()) throw std::invalid_argument("config key 'n' is empty");
  cfg.sim.n = cfg.sizes.front();
  cfg.sim.check();
  return cfg;
}

inline StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open config '" + path + "'");
  return load_study_config(in);
}

/// study.csv: one row per sample size in the Bias11..MSE22 column layout.
inline std::string study_csv(const std::vector<StudyResult>& rows) {
  std::ostringstream out;
  out << "n,Bias11,Bias12,MSE11,MSE12,Bias21,Bias22,MSE21,MSE22\n";
  for (const auto& r : rows) {
    out << r.config.n;
    for (std::size_t j = 0; j < 2; ++j)
      out << ',' << fmt6(r.bias[j][0]) << ',' << fmt6(r.bias[j][1]) << ',' << fmt6(r.mse[j][0])
          << ',' << fmt6(r.mse[j][1]);
    out << '\n';
  }
  return out.str();
}

inline std::string coefficients_csv(const std::vector<CauseFit>& fits,
                                    const std::vector<InferenceResult>& inference) {
  std::ostringstream out;
  out << "cause,covariate,coefficient,se,p_value\n";
  for (std::size_t j = 0; j < fits.size(); ++j)
    for (std::size_t c = 0; c < fits[j].beta.size(); ++c)
      out << j + 1 << ",z" << c + 1 << ',' << fmt6(fits[j].beta[c]) << ','
          << fmt6(inference[j].se[c]) << ',' << fmt6(inference[j].wald_p[c]) << '\n';
  return out.str();
}

/// Knots are written exactly so they match the data; values at 6 digits.
inline std::string step_function_csv(const StepFunction& fn) {
  std::ostringstream out;
  out << "time,value\n";
  for (std::size_t q = 0; q < fn.size(); ++q)
    out << pcmm::detail::exact_real(fn.knots[q]) << ',' << fmt6(fn.values[q]) << '\n';
  return out.str();
}

inline StepFunction read_step_function_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || pcmm::detail::trim(line) != "time,value")
    throw ParseError(1, path.string() + ": expected header 'time,value'");
  StepFunction fn;
  while (std::getline(in, line)) {
    ++lineno;
    if (pcmm::detail::trim(line).empty()) continue;
    auto f = pcmm::detail::split_csv(line);
    std::optional<double> t, v;
    if (f.size() == 2) {
      t = pcmm::detail::parse_real(f[0]);
      v = pcmm::detail::parse_real(f[1]);
    }
    if (!t || !v) throw ParseError(lineno, path.string() + ": malformed row");
    fn.knots.push_back(*t);
    fn.values.push_back(*v);
  }
  if (!fn.is_valid()) throw ValidationError(path.string() + ": not a non-decreasing step function");
  return fn;
}

namespace detail {

inline nlohmann::ordered_json fit_report(const RunConfig& cfg, const PanelDataset& data,
                                         const std::vector<CauseFit>& fits,
                                         const std::vector<InferenceResult>& inference,
                                         const std::string& status, const std::string& message) {
  nlohmann::ordered_json r;
  r["status"] = status;
  if (!message.empty()) r["message"] = message;
  r["subjects"] = data.size();
  r["observations"] = data.total_visits();
  r["causes"] = data.causes;
  r["covariates"] = data.dim;
  r["epsilon"] = cfg.fit.epsilon;
  r["max_iter"] = cfg.fit.max_iter;
  r["inference"] = data.dim == 0 ? "none" : to_string(cfg.inference);
  if (cfg.inference == InferenceMethod::bootstrap) r["boot_reps"] = cfg.boot_reps;
  r["seed"] = cfg.seed;
  for (const auto& f : fits) {
    const std::string key = "cause" + std::to_string(f.cause + 1) + "_";
    r[key + "status"] = to_string(f.status);
    if (!f.message.empty()) r[key + "message"] = f.message;
    r[key + "iterations"] = f.iterations;
    r[key + "converged"] = f.converged();
    r[key + "beta"] = f.beta;
    r[key + "loglik_trace"] = f.loglik_trace;
    r[key + "knots"] = f.baseline.size();
  }
  for (const auto& inf : inference) {
    const std::string key = "cause" + std::to_string(inf.cause + 1) + "_";
    r[key + "se"] = inf.se;
    if (inf.method == InferenceMethod::bootstrap) {
      r[key + "boot_used"] = inf.replicates;
      r[key + "boot_failed"] = inf.failed;
    }
  }
  return r;
}

}  // namespace detail

/// Fits a panel CSV and writes coefficients.csv, baseline_cause<j>.csv and
/// fit_report.json into cfg.out.
inline int cmd_fit(const RunConfig& cfg, std::ostream& err) {
  PanelDataset data;
  try {
    PanelSchema schema;
    schema.time_decimals = cfg.time_decimals;
    data = parse_panel_csv(cfg.input, schema);
  } catch (const ParseError& e) {
    err << "error: invalid input: " << cfg.input << ": " << e.what() << '\n';
    return kInvalidInput;
  } catch (const ValidationError& e) {
    err << "error: invalid data: " << e.what() << '\n';
    return kInvalidInput;
  }

  fs::create_directories(cfg.out);
  const fs::path out(cfg.out);
  const auto fits = fit(data, cfg.fit);
  for (const auto& f : fits) {
    if (f.status == FitStatus::failed) continue;
    detail::write_text(out / detail::baseline_file(f.cause), step_function_csv(f.baseline));
  }

  auto fail = [&](const std::string& message, const std::vector<InferenceResult>& inf) {
    err << "error: convergence: " << message << '\n';
    detail::write_text(out / "fit_report.json",
                       detail::fit_report(cfg, data, fits, inf, "failed", message).dump(2) + "\n");
    return kNoConvergence;
  };
  for (const auto& f : fits)
    if (!f.converged())
      return fail("cause " + std::to_string(f.cause + 1) + ": " +
                      (f.message.empty() ? std::string("reached max_iter") : f.message),
                  {});

  std::vector<InferenceResult> inference;
  if (data.dim > 0) {
    try {
      if (cfg.inference == InferenceMethod::bootstrap) {
        inference = bootstrap_se(data, fits, cfg.fit, cfg.boot_reps, cfg.seed, cfg.threads);
      } else {
        for (const auto& f : fits) inference.push_back(sandwich_se(data, f));
      }
    } catch (const std::exception& e) {
      return fail(std::string("inference: ") + e.what(), inference);
    }
    detail::write_text(out / "coefficients.csv", coefficients_csv(fits, inference));
  }
  detail::write_text(out / "fit_report.json",
                     detail::fit_report(cfg, data, fits, inference, "ok", "").dump(2) + "\n");
  return kOk;
}

/// Runs the study in cfg.config at each listed sample size and writes
/// study.csv plus study_report.json (config echo and failure counts).
inline int cmd_simulate(const RunConfig& cfg, std::ostream& err) {
  StudyConfig study;
  try {
    study = load_study_config(cfg.config);
  } catch (const std::exception& e) {
    err << "error: invalid config: " << e.what() << '\n';
    return kInvalidInput;
  }
  study.sim.seed = cfg.seed;

  fs::create_directories(cfg.out);
  const fs::path out(cfg.out);
  nlohmann::ordered_json report;
  report["seed"] = cfg.seed;
  report["beta1"] = study.sim.beta1;
  report["beta2"] = study.sim.beta2;
  report["baseline1"] = study.sim.baseline1.to_string();
  report["baseline2"] = study.sim.baseline2.to_string();
  report["rho"] = study.sim.rho;
  report["max_visits"] = study.sim.max_visits;
  report["gap_min"] = study.sim.gap_min;
  report["gap_max"] = study.sim.gap_max;
  report["bernoulli_p"] = study.sim.bernoulli_p;
  report["normal_sd"] = study.sim.normal_sd;
  report["replications"] = study.sim.replications;
  report["epsilon"] = study.sim.fit.epsilon;
  report["n"] = study.sizes;

  std::vector<StudyResult> rows;
  int status = kOk;
  for (std::size_t n : study.sizes) {
    SimConfig sim = study.sim;
    sim.n = n;
    try {
      rows.push_back(run_study(sim, cfg.threads));
    } catch (const StudyError& e) {
      err << "error: study failed at n=" << n << ": " << e.what() << '\n';
      report["error"] = e.what();
      status = kStudyFailed;
      break;
    }
  }
  std::vector<std::size_t> used, failed, clamped, violations;
  for (const auto& r : rows) {
    used.push_back(r.used);
    failed.push_back(r.failed);
    clamped.push_back(r.clamped_draws);
    violations.push_back(r.trace_violations);
  }
  report["used"] = used;
  report["failed"] = failed;
  report["clamped_draws"] = clamped;
  report["trace_violations"] = violations;
  detail::write_text(out / "study.csv", study_csv(rows));
  detail::write_text(out / "study_report.json", report.dump(2) + "\n");
  return status;
}

/// Samples each cause's fitted baseline on a grid (default: its knots) into
/// baseline_curve_cause<j>.csv. The input is either a directory written by
/// cmd_fit or a panel CSV, which is fitted first.
inline int cmd_baseline(const RunConfig& cfg, std::ostream& err) {
  std::vector<StepFunction> curves;
  const fs::path in(cfg.input);
  try {
    if (fs::is_directory(in)) {
      if (!fs::exists(in / "fit_report.json")) {
        err << "error: missing fit: no fit_report.json in " << in.string() << '\n';
        return kInvalidInput;
      }
      std::ifstream rs(in / "fit_report.json");
      const auto report = nlohmann::json::parse(rs);
      const auto causes = report.at("causes").get<std::size_t>();
      for (std::size_t j = 0; j < causes; ++j) {
        const auto path = in / detail::baseline_file(j);
        if (!fs::exists(path)) {
          err << "error: missing fit: " << path.string() << '\n';
          return kInvalidInput;
        }
        curves.push_back(read_step_function_csv(path));
      }
    } else if (fs::is_regular_file(in)) {
      PanelSchema schema;
      schema.time_decimals = cfg.time_decimals;
      const auto data = parse_panel_csv(cfg.input, schema);
      for (const auto& f : fit(data, cfg.fit)) {
        if (f.status == FitStatus::failed) {
          err << "error: convergence: cause " << f.cause + 1 << ": " << f.message << '\n';
          return kNoConvergence;
        }
        curves.push_back(f.baseline);
      }
    } else {
      err << "error: missing fit: '" << cfg.input << "' does not exist\n";
      return kInvalidInput;
    }
  } catch (const std::exception& e) {
    err << "error: invalid input: " << e.what() << '\n';
    return kInvalidInput;
  }

  fs::create_directories(cfg.out);
  const fs::path out(cfg.out);
  for (std::size_t j = 0; j < curves.size(); ++j) {
    std::vector<double> grid = cfg.grid ? *cfg.grid : curves[j].knots;
    std::sort(grid.begin(), grid.end());
    std::ostringstream csv;
    csv << "time,value\n";
    for (double t : grid) csv << pcmm::detail::exact_real(t) << ',' << fmt6(curves[j](t)) << '\n';
    detail::write_text(out / ("baseline_curve_cause" + std::to_string(j + 1) + ".csv"), csv.str());
  }
  return kOk;
}

inline int run(const RunConfig& cfg, std::ostream& err) {
  switch (cfg.command) {
    case Command::fit: return cmd_fit(cfg, err);
    case Command::simulate: return cmd_simulate(cfg, err);
    case Command::baseline: return cmd_baseline(cfg, err);
  }
  return kUsage;
}

}  // namespace pcmm::cli
