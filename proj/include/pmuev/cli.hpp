#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pmuev {

// Exit codes: 0 success, 1 usage or config error, 2 data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pmuev
