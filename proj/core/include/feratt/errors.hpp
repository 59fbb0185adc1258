#pragma once

#include <stdexcept>
#include <string>

namespace feratt {

// Invalid values or shapes passed across a module boundary.
// std::invalid_argument doubles as the contract-violation error.
struct ConfigurationError : std::runtime_error {
  explicit ConfigurationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A transform or mask left no usable face pixels.
struct DegenerateSampleError : std::runtime_error {
  explicit DegenerateSampleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Division guard for the luminance factor (all-black face region).
struct DivisionGuardError : std::runtime_error {
  explicit DivisionGuardError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct VersionMismatchError : std::runtime_error {
  explicit VersionMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace feratt
