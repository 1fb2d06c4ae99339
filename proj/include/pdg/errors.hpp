#pragma once

#include <stdexcept>
#include <string>

namespace pdg {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inputs whose shapes are incompatible (dimension mismatch, wrong sizes).
struct ShapeError : Error {
    using Error::Error;
};

// Inputs that violate a documented precondition (empty sets, non-finite
// values, invalid configuration fields).
struct ValidationError : Error {
    using Error::Error;
};

// Non-finite values produced during computation (overflow, NaN).
struct NumericError : Error {
    using Error::Error;
};

// File reading / writing failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace pdg
