#pragma once

#include <stdexcept>
#include <string>

namespace lth {

// Error taxonomy maps onto CLI exit codes:
//   ConfigError -> 1, DataError/FormatError -> 2, IoError -> 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a layer has no surviving weights left to prune.
struct PruneError : std::runtime_error {
  explicit PruneError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lth
