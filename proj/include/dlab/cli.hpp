#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dlab {

/// Exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // training, value or shape errors
  kExitUsage = 2,
  kExitFormat = 3,
  kExitIntegrity = 4,
};

/// Runs one command line (args[0] is the program name). Failures print a
/// single line to `err`:  error: kind=<usage|format|integrity|failure> message="..."
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace dlab
