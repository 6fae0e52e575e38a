#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ng4d::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,      // bad flags, invalid configuration
  kData = 2,       // unreadable or malformed input files
  kNumerical = 3,  // non-finite values, or a failed gradient check
};

/// Runs one subcommand: fit, interp, flow, densify, bench or gradcheck.
/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ng4d::cli

/// Process entry point over argv; writes to stdout/stderr.
int cli_main(int argc, const char* const* argv);
