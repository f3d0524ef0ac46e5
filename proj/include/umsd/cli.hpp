#pragma once

#include <ostream>

namespace umsd {

/// Exit codes: 0 success, 1 internal error, 2 input or config error,
/// 3 checkpoint error.
enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitInput = 2, kExitCheckpoint = 3 };

/// Entry point of the umsd tool: gen-data, train, transfer, eval, inspect.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace umsd
