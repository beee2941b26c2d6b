#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Runs one `cfn` command line (args excludes the program name). Diagnostics
// go to `err`; tables and summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfn::cli
