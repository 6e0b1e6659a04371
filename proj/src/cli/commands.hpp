#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dfacto::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitNothingToRun = 3,
  kExitNumerical = 4,
};

/// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dfacto::cli
