#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sae::cli {

inline constexpr const char* kVersion = "1.0.0";

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 input or configuration error, 2 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sae::cli
