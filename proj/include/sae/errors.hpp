#pragma once

#include <stdexcept>

namespace sae {

// Dimension or shape violation on a matrix operation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data (IDX files, weight containers). The message names
// the offending field.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value. The message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite value where a finite one is required (e.g. a loss blow-up).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sae
