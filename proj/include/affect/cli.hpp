#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace affect {

// Exit codes of the `affect` tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // usage, config, format and data errors
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;  // training aborted on a non-finite value

// Runs one subcommand. args excludes the program name. Reports and summaries
// go to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace affect
