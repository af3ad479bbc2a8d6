#pragma once

#include <iosfwd>

namespace distbalance {

/// Entry point of the command-line tool. Results go to `out` unless an
/// --output path is given; errors are written to `err` as one JSON object.
/// Returns the process exit code: 0 success, 2 input error, 3 solver
/// failure, 4 infeasible targets or missing support.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace distbalance
