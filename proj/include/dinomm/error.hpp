#pragma once

#include <stdexcept>
#include <string>

namespace dinomm {

// Base for all library errors. CLI maps ConfigError to exit 2, the rest to 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension/extent mismatches; message carries the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Numeric-domain and parameter-range violations (log of nonpositive, tau <= 0).
struct ValueError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed container files (bad magic, truncation, checksum mismatch).
struct FormatError : Error {
  using Error::Error;
};

// API contract violations (non-scalar loss, tape-attached teacher logits).
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values detected where finiteness is required.
struct NumericError : Error {
  using Error::Error;
};

// Filesystem failures (unreadable/unwritable paths).
struct IoError : Error {
  using Error::Error;
};

}  // namespace dinomm
