#pragma once

#include <iosfwd>

namespace snagg {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitDiverged = 4,
  kExitCheckFailed = 5,
};

/// Runs one command (gen-data, train, expand, eval, flow-encode,
/// grad-check) and returns its exit code. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace snagg
