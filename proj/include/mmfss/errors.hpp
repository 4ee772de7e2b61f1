#pragma once

#include <stdexcept>
#include <string>

namespace mmfss {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a precondition (non-scalar loss, empty list, width mismatch).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or scene specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite value or had nothing to fit.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Episode construction failed (not enough scenes, empty support mask).
class EpisodeError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A label or name has no entry in a lookup table.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Evaluation classes overlap the classes a checkpoint was trained on.
class SplitLeakageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmfss
