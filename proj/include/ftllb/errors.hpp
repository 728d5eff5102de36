#pragma once

#include <stdexcept>
#include <string>

namespace ftllb {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A node has degree zero, so the normalized Laplacian is undefined.
class DegenerateGraph : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

/// The adversary returned a decision outside its contract (budget, or a drop
/// that does not touch a faulted node).
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

/// 34/15 - 4 d_min / (3 d_max) >= 1: the outlier-fixing loop would not shrink.
class InvalidRatio : public Error {
 public:
  using Error::Error;
};

/// The random-link density q exceeds 1.
class InvalidDensity : public Error {
 public:
  using Error::Error;
};

class TraceMismatch : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (graph, trace, config). Carries the 1-based line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ftllb
