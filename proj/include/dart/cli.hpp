#pragma once

#include <string>
#include <vector>

namespace dart {

// Parses and runs one command line. `args` holds the arguments after the
// program name, in natural order. Returns the process exit code:
//   0 success, 1 usage error, 2 data error, 3 invariant violation.
// Machine-readable output (JSON, or CSV for sweep-k) goes to stdout;
// logs and error messages go to stderr.
int run_cli(std::vector<std::string> args);
int run_cli(int argc, char** argv);

}  // namespace dart
