#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gpat::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kPropertyFailure = 1,
  kFlagError = 2,
  kIoError = 3,
  kNumericDivergence = 4,
  kCheckpointMismatch = 5,
};

/// Runs one subcommand (gen-data, train, eval, assemble, verify). `args`
/// excludes the program name. Normal output goes to `out`, diagnostics to
/// `err`; the return value is the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gpat::cli
