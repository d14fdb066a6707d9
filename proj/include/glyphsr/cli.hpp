#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace glyphsr {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitIo = 3,
    kExitNumeric = 4,
    kExitMismatch = 5,
};

// args excludes the program name. Never throws; errors map onto ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glyphsr
