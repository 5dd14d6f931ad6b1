#pragma once

#include <stdexcept>
#include <string>

namespace fcas {

// Input that violates a documented precondition (bad ladder, bad config, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent data files. Carries the 1-based row when known.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, long row = -1)
      : std::runtime_error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

// Operation invoked in the wrong lifecycle state (e.g. stepping a finished episode).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite losses, diverging updates.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fcas
