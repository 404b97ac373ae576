#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xcg::cli {

/// Runs one command line (without the program name). Failures are reported
/// as a JSON object on `err`; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xcg::cli
