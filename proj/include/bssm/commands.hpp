#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bssm {

/// Entry point of the `bssm` tool. `args` excludes the program name.
/// Returns the process exit status; failures print one JSON line
/// {"error": kind, "message": text} to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bssm
