#pragma once

#include <iosfwd>

namespace e2eload {

/// Runs the built-in oracle suites, printing one line per check.
/// Returns the number of failed checks.
int run_selftest(std::ostream& out);

}  // namespace e2eload
