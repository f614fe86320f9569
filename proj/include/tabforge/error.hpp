#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tabforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed shape: empty grids, ragged rows, zero columns.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A value outside the domain of an operation (non-finite numbers, bad ranges).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tabforge
