#pragma once

#include <stdexcept>
#include <string>

namespace ifs {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/frame extents do not line up (bad channel counts, mismatched shapes).
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// An operation was called outside its contract (non-scalar loss, missing
// grad, out-of-range label, wrong window length, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value or combination.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk payload (bad magic, truncation, extent mismatch).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// A referenced file could not be opened or read.
struct LoadError : Error {
  explicit LoadError(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace ifs
