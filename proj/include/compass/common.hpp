// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace compass {

// Validation failures that should map to CLI exit code 1 (bad input /
// config), as opposed to runtime failures (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

inline void config_check(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace compass
