#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace protood::cli {

/// Runs one CLI invocation. `args` excludes the program name. Returns the
/// process exit code (0 ok, 2 config, 3 shape/format, 4 data, 5 I/O).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protood::cli
