#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clusterkit {

extern const char* kVersion;

// Full command dispatch: parses argv-style arguments, runs the pipeline,
// writes the report to `out` and messages to `err`. Exit codes: 0 success,
// 1 usage, 2 data error, 3 method error.
int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err);

}  // namespace clusterkit
