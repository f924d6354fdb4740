#pragma once

#include <ostream>

// Build sanity gate behind the `selftest` CLI subcommand: finite-difference
// gradient checks for every differentiable op and for the full video-to-loss
// composite, plus the structural invariants (mask partition, rotary
// identities, assignment oracle, loss closed forms, round-trip formats,
// determinism). Prints one line per check; returns the number of failures.
namespace trajtok::selftest {

int run(std::ostream& out);

}  // namespace trajtok::selftest
