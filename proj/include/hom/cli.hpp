#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hom::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kIo = 3, kNumeric = 4 };

/// Environment variable holding the default worker count.
inline constexpr const char* kWorkersEnv = "HOM_WORKERS";

/// Runs the command line `args` (args[0] is the program name). Returns the
/// process exit code; diagnostics go to `err`, results to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hom::cli
