#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lsgcpd::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNotConverged = 3,
};

/// Runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lsgcpd::cli
