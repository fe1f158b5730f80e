#pragma once

#include <stdexcept>
#include <string>

namespace qforest {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor/matrix dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument or violated call precondition (degenerate input, value out of range).
struct ArgumentError : Error {
    using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, wrong record size).
struct FormatError : Error {
    using Error::Error;
};

// Object is in the wrong state for the operation (non-canonical model, stale cache,
// wrong container kind).
struct StateError : Error {
    using Error::Error;
};

// Numerical failure: divergence, underflow, inconsistent eigenvalues, singular retraction.
struct NumericError : Error {
    using Error::Error;
};

// Dataset contents violate the model contract (label out of range, size mismatch).
struct DataError : Error {
    using Error::Error;
};

// A referenced filesystem path does not exist.
struct MissingPathError : Error {
    explicit MissingPathError(const std::string& path)
        : Error("path does not exist: " + path), path(path) {}
    std::string path;
};

}  // namespace qforest
