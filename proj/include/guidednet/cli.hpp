#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace guidednet::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Runs one command line (without the program name). Usage errors print the synopsis to `err`
/// and return 1; runtime failures return 2.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace guidednet::cli
