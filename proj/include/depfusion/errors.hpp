#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace depfusion {

// Base class for everything this library throws on bad input or bad state.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension or layout mismatch between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Bad scalar argument (non-odd kernel, levels < 1, scale <= 0, ...).
struct InvalidArgument : Error {
    using Error::Error;
};

// Malformed serialized data. Carries the byte offset where parsing failed.
struct FormatError : Error {
    std::size_t byte_offset;
    FormatError(const std::string& msg, std::size_t offset)
        : Error(msg + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
};

// State-space system violates the stability condition (some a_j >= 0 or
// a discrete eigenvalue outside (0, 1)).
struct InstabilityError : Error {
    using Error::Error;
};

// Operation defined only for a different system mode (e.g. convolution
// kernel of a time-varying system).
struct UnsupportedModeError : Error {
    using Error::Error;
};

// Non-finite value produced where the contract requires finite results.
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace depfusion
