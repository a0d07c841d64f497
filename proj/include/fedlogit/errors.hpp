#pragma once

#include <stdexcept>

namespace fedlogit {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unusable setup: bad sizes, mismatched components, invalid experiment config.
struct ConfigError : Error {
    using Error::Error;
};

// Invalid data handed to an operation.
struct InputError : Error {
    using Error::Error;
};

// Malformed file contents.
struct FormatError : Error {
    using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
    using Error::Error;
};

// Density estimation failures.
struct FitError : Error {
    using Error::Error;
};

}  // namespace fedlogit
