#pragma once

#include <stdexcept>
#include <string>

namespace hpcf {

/// Base class for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape or operator-spec violation.
struct ShapeError : Error {
  using Error::Error;
};

/// Bad user-facing configuration; the CLI maps these to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

/// File IO failure (missing input, undecodable PNG, short write, ...).
struct IoError : Error {
  using Error::Error;
};

/// Optimizer or training-loop misuse (e.g. stepping without gradients).
struct TrainError : Error {
  using Error::Error;
};

}  // namespace hpcf
