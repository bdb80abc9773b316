#pragma once

#include <iosfwd>

namespace semiblind::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, char** argv);

/// Same, with explicit streams (interactive input, output, diagnostics).
int run(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace semiblind::cli
