#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace meshreg::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfigError = 2,
    kMissingInput = 3,
    kNumericalError = 4,
};

/// Runs one command line (args[0] is the program name). Output goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace meshreg::cli
