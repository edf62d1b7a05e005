#pragma once

#include <iosfwd>

namespace uqadv {

/// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uqadv
