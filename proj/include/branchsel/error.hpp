#pragma once

#include <stdexcept>
#include <string>

namespace branchsel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed grammar source or an inconsistent grammar.
class GrammarError : public Error {
 public:
  GrammarError(const std::string& message, std::size_t line = 0, std::size_t column = 0)
      : Error(line == 0 ? message
                        : "line " + std::to_string(line) + ", column " + std::to_string(column) +
                              ": " + message),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// An action sequence, order assignment or AST that violates the grammar.
class TransitionError : public Error {
 public:
  using Error::Error;
};

/// Shape mismatches and other misuse of the numeric kernels.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Dataset, template, checkpoint or configuration I/O failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace branchsel
