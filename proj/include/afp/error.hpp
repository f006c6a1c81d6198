#pragma once

#include <stdexcept>
#include <string>

namespace afp {

/// Bad input data: empty signals, out-of-range windows, silent noise, etc.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or corrupted file (bad magic, truncated payload, checksum).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or inconsistent shapes between components.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite activations or loss during encoding/training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No candidate sequence reached the required consistency ratio.
class LocalizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace afp
