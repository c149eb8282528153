#pragma once

#include <iosfwd>

namespace emodiff::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kRuntimeFailure = 2 };

/// Runs the emodiff command line. Messages go to out and err; the return value is the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace emodiff::cli
