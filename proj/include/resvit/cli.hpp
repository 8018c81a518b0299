#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace resvit {

// Parses and dispatches one CLI invocation (argv without the program name).
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace resvit
