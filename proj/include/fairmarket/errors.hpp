#pragma once

#include <stdexcept>
#include <string>

namespace fairmarket {

/// Invalid or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system or parse failure on external input. CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A runtime invariant was violated (ledger imbalance, NaN loss, ...).
/// CLI exit code 4.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fairmarket
