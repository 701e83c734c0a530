#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace prp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value that must be finite was NaN or infinite.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string what_arg, std::string name)
      : Error(std::move(what_arg)), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// QR input whose columns are (numerically) linearly dependent.
class RankDeficientError : public Error {
 public:
  RankDeficientError(std::string what_arg, std::size_t column)
      : Error(std::move(what_arg)), column_(column) {}
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

/// Backward was requested without a preceding forward.
class StateError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace prp
