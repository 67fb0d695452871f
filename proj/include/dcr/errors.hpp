#pragma once

#include <stdexcept>
#include <string>

namespace dcr {

/// Tensor or layer shapes disagree.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf reached a place where only finite values are allowed.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input data violates a documented precondition.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The requested quantity cannot be computed from the data at hand
/// (e.g. PEHE without ground-truth potential outcomes).
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad cell, truncated row, ...).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Column mapping or config keys do not match what the file provides.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dcr
