#pragma once

#include <stdexcept>
#include <string>

namespace ordseg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller supplied malformed data (shapes, label ranges, non-finite values).
class ValidationError : public Error { using Error::Error; };
// A hyperparameter or structural setting is out of its allowed range.
class ConfigError : public Error { using Error::Error; };
// API misuse, e.g. backward on a non-scalar or an empty grid.
class UsageError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class EmptyRegionError : public Error { using Error::Error; };
class UnboundedFieldError : public Error { using Error::Error; };
class OracleError : public Error { using Error::Error; };
class GeometryError : public Error { using Error::Error; };
class PartitionError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

}  // namespace ordseg
