#pragma once

#include <stdexcept>
#include <string>

namespace mdat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Class label outside the valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyper-parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a precondition (missing field, duplicate id, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API contract, e.g. supplying a speaker label for a target sample.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A loss became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), detail_(what), line_(line) {}
  std::size_t line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t line_;
};

}  // namespace mdat
