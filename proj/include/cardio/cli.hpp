#pragma once

#include <ostream>

namespace cardio {

inline constexpr const char* kVersion = "cardioformer 0.1.0";

/// Entry point of the `cardioformer` tool. Returns the process exit status:
/// 0 exactly when no error was reported.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cardio
