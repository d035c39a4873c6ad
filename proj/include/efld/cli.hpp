#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace efld::cli {

inline constexpr const char* toolkit_version = "1.0.0";

/// Runs the `efld` command line. args excludes the program name.
/// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace efld::cli
