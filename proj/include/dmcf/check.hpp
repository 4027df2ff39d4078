#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dmcf {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite: ASCC momentum sum, kernel antisymmetry, ASCC
/// gradient spot checks and the EMD permutation oracle for n <= 5.
std::vector<CheckResult> run_invariant_checks(std::uint64_t seed = 7);

}  // namespace dmcf
