#pragma once

#include <stdexcept>
#include <string>

namespace embshap {

/// Base of all toolkit errors. The exit code follows the CLI convention:
/// 1 usage, 2 data/validation, 3 numerical failure.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}

  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, 1) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, 2) {}
};

/// Malformed input file. `line` is 1-based; 0 when not line-oriented.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError(line > 0 ? "line " + std::to_string(line) + ": " + what
                                 : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 2) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what, 3) {}
};

}  // namespace embshap
