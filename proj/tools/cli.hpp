#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "sgembed/error.hpp"

namespace sgembed::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;           ///< unknown flag, bad flag value
inline constexpr int kExitInvalidArgument = 3;  ///< invalid configuration value
inline constexpr int kExitIo = 4;               ///< missing or unwritable file
inline constexpr int kExitParse = 5;            ///< malformed data file or unknown label
inline constexpr int kExitCheckpointCorrupt = 6;
inline constexpr int kExitCheckpointMismatch = 7;  ///< vocabulary hash, version or config mismatch
inline constexpr int kExitSampler = 8;             ///< sampler exhausted or degenerate distribution
inline constexpr int kExitNonFiniteLoss = 9;
inline constexpr int kExitInternal = 10;

int exit_code_for(ErrorKind kind);

/// Runs one invocation; `args` excludes the program name. Errors are reported
/// on `err` as a single line `error[<class>]: <message>`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sgembed::cli
