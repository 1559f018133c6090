#pragma once

#include <stdexcept>
#include <string>

namespace ait {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// A scalar argument is outside its valid range (k < 1, beta <= 0, ...).
class ParameterError : public Error {
   public:
    using Error::Error;
};

/// Bottleneck budget larger than the pool of squashed patches.
class CapacityError : public ParameterError {
   public:
    using ParameterError::ParameterError;
};

/// NaN / Inf encountered where finite values are required.
class NumericError : public Error {
   public:
    using Error::Error;
};

/// Invalid or contradictory configuration.
class ConfigError : public Error {
   public:
    using Error::Error;
};

/// Malformed dataset or checkpoint file.
class FormatError : public Error {
   public:
    using Error::Error;
};

/// Filesystem failure (open, write, short write).
class IoError : public Error {
   public:
    using Error::Error;
};

}  // namespace ait
