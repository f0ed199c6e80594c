#pragma once

#include <string>
#include <vector>

namespace hydro::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, char** argv);
/// args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace hydro::cli
