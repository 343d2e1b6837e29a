#pragma once

#include <stdexcept>
#include <string>

namespace imgap {

/// Invalid or unusable configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical or runtime failure during training (CLI exit code 2).
class RunError : public std::runtime_error {
 public:
  explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace imgap
