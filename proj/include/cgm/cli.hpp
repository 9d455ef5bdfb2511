#pragma once

#include <ostream>

namespace cgm {

inline constexpr const char* kToolName = "cgm-tool";
inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point of the command-line tool. Returns 0 on success, 2 on invalid
/// input (bad flags, malformed files, failed validation) and 1 on runtime
/// failures. Progress goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cgm
