#pragma once

#include <string>
#include <vector>

namespace icp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `icp-audit` tool; returns the process exit code.
/// `args[0]` is the program name.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace icp::cli
