#pragma once

#include <stdexcept>
#include <string>

namespace pgqa {

/// Base of every error thrown by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed a precondition or schema check. The CLI maps this to exit 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed record in an input stream; `index` is the 0-based record ordinal.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t index, const std::string& what)
      : ValidationError("record " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during optimization (non-finite loss).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace pgqa
