#pragma once

#include <stdexcept>
#include <string>

namespace safebayes {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs with the wrong shape (covariate length, prior dimension, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input, loss of positive definiteness, or another numerical
/// breakdown.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when the posterior mean of the variance b/(a-1) is requested while
/// the inverse-gamma shape is a <= 1.
class VarianceUndefined : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Invalid experiment configuration. The message carries a JSON-path-like
/// location of the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace safebayes
