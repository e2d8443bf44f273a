#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stsgr/tensor.hpp"

namespace stsgr {

struct ModuleGradCheck {
  std::string module;
  GradCheckReport report;
};

// Finite-difference checks for every learned module at the given model
// dimension: graph attention, edge convolution, pooling, window aggregation,
// vanilla and shuffled attention, feed-forward, generation head, retrieval
// head, and a combined full-model pass.
std::vector<ModuleGradCheck> run_gradient_suite(std::size_t d_h, std::uint64_t seed);

}  // namespace stsgr
