#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dtpn::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2 };

/// Entry point of the `dtpn` tool; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dtpn::cli
