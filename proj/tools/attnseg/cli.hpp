#pragma once

#include <ostream>

namespace attnseg::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kUserError = 2,
    kMissingData = 3,
};

/// Parses argv and runs one subcommand: tile, synth, train, eval, ablate,
/// render, gradcheck. Never throws; errors map to the exit codes above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace attnseg::cli
