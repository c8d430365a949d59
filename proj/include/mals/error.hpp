#pragma once

#include <stdexcept>
#include <string>

namespace mals {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Archive bytes do not follow the tensor archive layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Inputs violate a precondition: mismatched keys or shapes, bad config,
/// non-finite values, length mismatches.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed to reach its stopping criterion.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure while reading or writing.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace mals
