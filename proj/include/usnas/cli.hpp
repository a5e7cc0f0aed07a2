#pragma once

#include <string>
#include <vector>

namespace usnas {

// Entry point behind the usnas binary; args excludes the program name.
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace usnas
