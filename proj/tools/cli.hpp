#pragma once

#include <vector>
#include <string>

namespace fairmarket::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kIoError = 3,
  kInvariantError = 4,
};

/// Entry point shared by the executable and the integration tests.
int run(const std::vector<std::string>& args);

}  // namespace fairmarket::cli
