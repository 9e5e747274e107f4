#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pfadseg {

/// Entry point of the `pfadseg` tool. `args` excludes the program name.
/// Returns the process exit status: 0 on success, 2 for usage errors and
/// 1 for every other failure, in which case a one-line JSON error record
/// {"error": {"kind", "message"}} is written to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pfadseg
