#pragma once

#include <cstdint>
#include <vector>

#include "mhsa/gradcheck.hpp"

namespace mhsa {

/// Finite-difference check of every differentiable op, each model block and
/// the composed training objective on tiny dimensions.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace mhsa
