#pragma once

#include <stdexcept>
#include <string>

namespace bridgegen {

// Validation failures: bad shapes, configs, step indices, condition payloads.
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / format failures: missing files, bad magic, truncation.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bridgegen
