#pragma once

#include <stdexcept>
#include <string>

namespace mhs {

// Invalid SimConfig / HeuristicParams / DTConfig field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dispatch decision outside the action space.
class ActionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API called out of order (stale event, advancing past the horizon, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed dataset or manifest. Carries the offending line when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  long line() const noexcept { return line_; }

 private:
  long line_;
};

// Weight container could not be loaded.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mhs
