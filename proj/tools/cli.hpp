#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace zsd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one invocation; argv[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "N@lo:hi" (N uniform values, both ends included) or a comma list.
std::vector<double> parse_lambda_grid(const std::string& text);

}  // namespace zsd::cli
