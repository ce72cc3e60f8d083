#pragma once

#include <stdexcept>
#include <string>

namespace leaprec {

// Error taxonomy mirrors the CLI exit codes: config/usage -> 2,
// data ingestion -> 3, numerical failure -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Graph/tensor shape violations. These indicate a malformed computation
// graph, not bad user data.
struct ShapeError : std::logic_error {
  explicit ShapeError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace leaprec
