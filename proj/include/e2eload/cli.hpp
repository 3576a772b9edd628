#pragma once

#include <iosfwd>

namespace e2eload {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Command-line entry point: train, infer, bench, eval-lengths, selftest, gen-data.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace e2eload
