#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pseudolab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pseudolab::cli
