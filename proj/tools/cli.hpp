#pragma once
// Command-line front end. Exit codes: 0 success, 1 domain error (a failed
// contract, a missing artifact, a bad file), 2 usage error.

#include <iosfwd>

namespace ccot::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ccot::cli
