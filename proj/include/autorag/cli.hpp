#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace autorag::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit code: 0 success, 1 usage or config error, 2 data error,
/// 3 internal invariant violation.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace autorag::cli
