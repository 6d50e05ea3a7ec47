#pragma once

#include <stdexcept>
#include <string>

namespace ccopf {

/// Malformed input text (case files, CSV, JSON documents).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

private:
  int line_;
};

/// Structurally invalid model: disconnected grid, conflicting sites, bad limits.
class ModelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown (singular systems, failed factorizations).
class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File that cannot be opened or read.
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller.
class ArgumentError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace ccopf
