#pragma once

#include <stdexcept>
#include <string>

namespace srl4h {

// Invalid configuration, shapes or arguments supplied by the caller.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An API was used out of order (e.g. a single-use tape replayed).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Numerical or I/O failure while running.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace srl4h
