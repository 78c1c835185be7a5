#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seqforge {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. The message names every shape involved.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Corpus or vocabulary input could not be ingested.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Malformed config text. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Hyperparameters that do not fit the schema: unknown keys, wrong types,
/// unknown module names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Modules that cannot be wired together (e.g. dims disagree across a
/// module boundary).
class AssemblyError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training. `step` is the global step index.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  explicit TrainingError(const std::string& what) : Error(what), step_(0) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace seqforge
