#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcmm {

/// Malformed input file (bad header, unparsable field). Carries the 1-based line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Data that parses but violates a dataset invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: singular matrices, zero exposures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate)
      : std::runtime_error(what), last_(std::move(last_iterate)) {}
  const std::vector<double>& last_iterate() const noexcept { return last_; }

 private:
  std::vector<double> last_;
};

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StudyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcmm
