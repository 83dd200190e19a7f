#pragma once
//
// Multi-mode panel count data: subjects observed at a few discrete times,
// each observation recording the cumulative count for every recurrence mode.
//

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pcmm/errors.hpp"

namespace pcmm {

using Count = std::int64_t;

/// One study subject. counts[j][p] is the cumulative count of mode j at times[p].
struct Subject {
  std::string id;
  std::vector<double> times;
  std::vector<std::vector<Count>> counts;
  std::vector<double> covariates;

  std::size_t visits() const noexcept { return times.size(); }

  double linear_predictor(std::span<const double> beta) const {
    double eta = 0.0;
    for (std::size_t c = 0; c < covariates.size(); ++c) eta += beta[c] * covariates[c];
    return eta;
  }

  bool operator==(const Subject&) const = default;
};

struct PanelDataset {
  std::vector<Subject> subjects;
  std::size_t causes = 1;
  std::size_t dim = 0;

  std::size_t size() const noexcept { return subjects.size(); }

  std::size_t total_visits() const noexcept {
    std::size_t total = 0;
    for (const auto& s : subjects) total += s.visits();
    return total;
  }

  bool operator==(const PanelDataset&) const = default;
};

/// Position of a single observation epoch inside a dataset.
struct ObsRef {
  std::size_t subject;
  std::size_t visit;
  bool operator==(const ObsRef&) const = default;
};

/// Per-time summaries for one cause over the distinct observation times.
///
/// `slot[i][p]` is the index q with times[q] equal to the p-th visit time of
/// subject i; it lets per-observation quantities be gathered without searching.
struct GroupedStats {
  std::size_t cause = 0;
  std::vector<double> times;
  std::vector<std::size_t> b;
  std::vector<double> nbar;
  std::vector<std::vector<ObsRef>> members;
  std::vector<std::vector<std::size_t>> slot;

  std::size_t size() const noexcept { return times.size(); }
};

/// Column layout of the long-format CSV: `id,time,n1..nk,z1..zd`.
struct PanelSchema {
  std::string id_column = "id";
  std::string time_column = "time";
  std::string count_prefix = "n";
  std::string covariate_prefix = "z";
  /// Round times to this many decimals before grouping. Unset keeps exact values.
  std::optional<int> time_decimals;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

inline std::optional<Count> parse_count(std::string_view s) {
  Count v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty() || v < 0)
    return std::nullopt;
  return v;
}

/// Shortest decimal string that parses back to the same double.
inline std::string exact_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Returns k such that `name` is `prefix` followed by the decimal k, else 0.
inline std::size_t indexed_column(std::string_view name, std::string_view prefix) {
  if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) return 0;
  std::size_t idx = 0;
  auto digits = name.substr(prefix.size());
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return 0;
  return idx;
}

inline double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

}  // namespace detail

/// Throws ValidationError on the first violated invariant.
inline void validate(const PanelDataset& data) {
  if (data.causes < 1) throw ValidationError("dataset must have at least one cause");
  if (data.subjects.empty()) throw ValidationError("dataset has no subjects");
  for (const auto& s : data.subjects) {
    if (s.times.empty())
      throw ValidationError("subject '" + s.id + "' has no observations");
    if (s.covariates.size() != data.dim)
      throw ValidationError("subject '" + s.id + "' has " +
                            std::to_string(s.covariates.size()) + " covariates, expected " +
                            std::to_string(data.dim));
    for (double z : s.covariates)
      if (!std::isfinite(z))
        throw ValidationError("subject '" + s.id + "' has a non-finite covariate");
    if (s.counts.size() != data.causes)
      throw ValidationError("subject '" + s.id + "' has counts for " +
                            std::to_string(s.counts.size()) + " causes, expected " +
                            std::to_string(data.causes));
    for (std::size_t p = 0; p < s.times.size(); ++p) {
      if (!std::isfinite(s.times[p]) || s.times[p] <= 0.0)
        throw ValidationError("subject '" + s.id + "' has a non-positive observation time");
      if (p > 0 && s.times[p] <= s.times[p - 1])
        throw ValidationError("subject '" + s.id + "' has observation times that are not strictly increasing");
    }
    for (std::size_t j = 0; j < data.causes; ++j) {
      const auto& n = s.counts[j];
      if (n.size() != s.times.size())
        throw ValidationError("subject '" + s.id + "' cause " + std::to_string(j + 1) +
                              " has the wrong number of counts");
      for (std::size_t p = 0; p < n.size(); ++p) {
        if (n[p] < 0)
          throw ValidationError("subject '" + s.id + "' cause " + std::to_string(j + 1) +
                                " has a negative count");
        if (p > 0 && n[p] < n[p - 1])
          throw ValidationError("subject '" + s.id + "' cause " + std::to_string(j + 1) +
                                " has a decreasing cumulative count");
      }
    }
  }
}

/// Reads the long-format CSV. Rows are grouped by id (first-appearance order)
/// and sorted by time within each subject.
inline PanelDataset read_panel_csv(std::istream& in, const PanelSchema& schema = {}) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw ParseError(lineno == 0 ? 1 : lineno, "missing header row");

  const std::string header_line = line;
  const auto header = detail::split_csv(header_line);
  if (header.size() < 3 || header[0] != schema.id_column || header[1] != schema.time_column)
    throw ParseError(lineno, "header must start with '" + schema.id_column + "," +
                                 schema.time_column + "' followed by count columns");
  std::size_t causes = 0;
  std::size_t col = 2;
  while (col < header.size() &&
         detail::indexed_column(header[col], schema.count_prefix) == causes + 1) {
    ++causes;
    ++col;
  }
  if (causes == 0)
    throw ParseError(lineno, "header has no count columns '" + schema.count_prefix + "1'...");
  std::size_t dim = 0;
  while (col < header.size()) {
    if (detail::indexed_column(header[col], schema.covariate_prefix) != dim + 1)
      throw ParseError(lineno, "unexpected header column '" + std::string(header[col]) + "'");
    ++dim;
    ++col;
  }

  struct Row {
    double time;
    std::vector<Count> counts;
    std::vector<double> z;
    std::size_t line;
  };
  std::vector<std::string> ids;
  std::vector<std::vector<Row>> rows;
  std::unordered_map<std::string, std::size_t> index;

  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size())
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(fields.size()));
    if (fields[0].empty()) throw ParseError(lineno, "empty subject id");
    Row row{0.0, std::vector<Count>(causes), std::vector<double>(dim), lineno};
    auto t = detail::parse_real(fields[1]);
    if (!t) throw ParseError(lineno, "invalid time '" + std::string(fields[1]) + "'");
    row.time = schema.time_decimals ? detail::round_to(*t, *schema.time_decimals) : *t;
    for (std::size_t j = 0; j < causes; ++j) {
      auto c = detail::parse_count(fields[2 + j]);
      if (!c)
        throw ParseError(lineno, "invalid count '" + std::string(fields[2 + j]) + "' in column " +
                                     std::string(header[2 + j]));
      row.counts[j] = *c;
    }
    for (std::size_t c = 0; c < dim; ++c) {
      auto z = detail::parse_real(fields[2 + causes + c]);
      if (!z)
        throw ParseError(lineno, "invalid covariate '" + std::string(fields[2 + causes + c]) +
                                     "' in column " + std::string(header[2 + causes + c]));
      row.z[c] = *z;
    }
    std::string id(fields[0]);
    auto [it, inserted] = index.try_emplace(id, ids.size());
    if (inserted) {
      ids.push_back(id);
      rows.emplace_back();
    }
    rows[it->second].push_back(std::move(row));
  }

  PanelDataset data;
  data.causes = causes;
  data.dim = dim;
  data.subjects.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& rs = rows[i];
    std::stable_sort(rs.begin(), rs.end(),
                     [](const Row& a, const Row& b) { return a.time < b.time; });
    Subject s;
    s.id = ids[i];
    s.covariates = rs.front().z;
    s.counts.assign(causes, {});
    for (const auto& r : rs) {
      if (r.z != s.covariates)
        throw ValidationError("subject '" + s.id + "' has covariates that vary between rows (line " +
                              std::to_string(r.line) + ")");
      s.times.push_back(r.time);
      for (std::size_t j = 0; j < causes; ++j) s.counts[j].push_back(r.counts[j]);
    }
    data.subjects.push_back(std::move(s));
  }
  validate(data);
  return data;
}

inline PanelDataset parse_panel_csv(const std::string& path, const PanelSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open '" + path + "'");
  return read_panel_csv(in, schema);
}

/// Writes the dataset in long format with round-trip exact reals.
inline void write_panel_csv(const PanelDataset& data, std::ostream& out,
                            const PanelSchema& schema = {}) {
  out << schema.id_column << ',' << schema.time_column;
  for (std::size_t j = 0; j < data.causes; ++j) out << ',' << schema.count_prefix << j + 1;
  for (std::size_t c = 0; c < data.dim; ++c) out << ',' << schema.covariate_prefix << c + 1;
  out << '\n';
  for (const auto& s : data.subjects) {
    for (std::size_t p = 0; p < s.times.size(); ++p) {
      out << s.id << ',' << detail::exact_real(s.times[p]);
      for (std::size_t j = 0; j < data.causes; ++j) out << ',' << s.counts[j][p];
      for (double z : s.covariates) out << ',' << detail::exact_real(z);
      out << '\n';
    }
  }
}

/// Groups every observation epoch by its distinct time. All epochs record all
/// causes, so `b` and `members` are the same for every cause; only `nbar` differs.
inline GroupedStats aggregate(const PanelDataset& data, std::size_t cause) {
  if (cause >= data.causes)
    throw std::invalid_argument("cause index " + std::to_string(cause) + " out of range");

  struct Entry {
    double time;
    ObsRef ref;
  };
  std::vector<Entry> all;
  all.reserve(data.total_visits());
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t p = 0; p < data.subjects[i].visits(); ++p)
      all.push_back({data.subjects[i].times[p], {i, p}});
  std::stable_sort(all.begin(), all.end(),
                   [](const Entry& a, const Entry& b) { return a.time < b.time; });

  GroupedStats g;
  g.cause = cause;
  g.slot.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) g.slot[i].resize(data.subjects[i].visits());

  for (std::size_t e = 0; e < all.size(); ++e) {
    if (e == 0 || all[e].time != all[e - 1].time) {
      g.times.push_back(all[e].time);
      g.members.emplace_back();
    }
    g.members.back().push_back(all[e].ref);
    g.slot[all[e].ref.subject][all[e].ref.visit] = g.times.size() - 1;
  }
  g.b.resize(g.size());
  g.nbar.resize(g.size());
  for (std::size_t q = 0; q < g.size(); ++q) {
    g.b[q] = g.members[q].size();
    double sum = 0.0;
    for (const auto& m : g.members[q])
      sum += static_cast<double>(data.subjects[m.subject].counts[cause][m.visit]);
    g.nbar[q] = sum / static_cast<double>(g.b[q]);
  }
  return g;
}

}  // namespace pcmm
