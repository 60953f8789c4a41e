#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mipslice::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv);
/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mipslice::cli
