#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace whatif::cli {

/// Exit codes: 0 success, 1 pipeline error, 2 usage error.
int run(int argc, char** argv);

/// Same as run(argc, argv) with program name omitted from `args`; output
/// streams are injectable for tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace whatif::cli
