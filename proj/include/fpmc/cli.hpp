#pragma once

#include <string>
#include <vector>

namespace fpmc {

/// Runs the `fpmc` command line. Returns the process exit code: 0 on
/// success, 2 for invalid input, 3 for numerical failure.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace fpmc
