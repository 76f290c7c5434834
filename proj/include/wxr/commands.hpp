#pragma once

// Command-line entry points: train, eval, continual-run, synth-data, restore, report.
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <iosfwd>
#include <string>
#include <vector>

namespace wxr {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience form for tests; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wxr
