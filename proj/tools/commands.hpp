#pragma once

#include <string>
#include <vector>

namespace atnbreak::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Parses argv (argv[0] is the program name) and runs one subcommand.
int run(const std::vector<std::string>& args);

}  // namespace atnbreak::cli
