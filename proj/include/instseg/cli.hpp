#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace instseg {

/// Runs the command-line tool. `args` excludes the program name. Returns
/// the process exit code: 0 success, 1 computation error, 2 input error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace instseg
