#pragma once

#include <stdexcept>
#include <string>

namespace deformsplat {

// Raised when an argument violates a documented precondition.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces or encounters non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File-system and format failures (datasets, checkpoints, images).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace deformsplat
