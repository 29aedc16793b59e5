#pragma once

// Command-line entry point: gen-data, train-teacher, extract, distill, eval
// and report.
//
// Exit codes: 0 ok, 1 usage error, 2 data or config error, 3 non-finite loss.

#include <iosfwd>
#include <string>
#include <vector>

namespace coupleface::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace coupleface::cli
