#pragma once

// Finite-difference checks of every block type at toy shapes, plus a
// truncated end-to-end network. Shared by the CLI and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "aapt/gradcheck.hpp"
#include "aapt/layers.hpp"

namespace aapt {

struct BlockCheck {
  std::string name;
  GradCheckReport report;
  Scalar tolerance = 0;
};

/// Checks d(sum(r * layer(x)))/d(x, params) for a fixed random r. With
/// `inject_fault` the analytic gradient of one entry is perturbed first.
GradCheckReport check_layer(Layer& layer, const Tensor& x, std::uint64_t seed,
                            const GradCheckOptions& options, bool inject_fault = false);

/// Inverted bottleneck, AA inverted bottleneck, dense block, transition
/// (blur, average, max) and head at 1e-5, then the gradcheck-preset network
/// through the coordinate loss at 1e-4.
std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed, bool inject_fault = false);

}  // namespace aapt
