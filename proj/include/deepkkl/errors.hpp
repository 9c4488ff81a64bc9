#pragma once

#include <stdexcept>
#include <string>

namespace dkkl {

// Non-finite or blown-up numbers. `index()` is the step / trajectory / sample
// at which the failure was detected, or -1 when not applicable.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, long index = -1)
      : std::runtime_error(what), index_(index) {}
  long index() const noexcept { return index_; }

 private:
  long index_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateScaleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dkkl
