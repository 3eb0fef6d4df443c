#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aapt/tensor.hpp"

namespace aapt {

/// A flat block of scalars perturbed by the checker, paired with the analytic
/// gradient computed for it.
struct GradTarget {
  std::string name;
  std::span<Scalar> values;
  std::span<const Scalar> analytic;
};

struct GradCheckOptions {
  Scalar tolerance = 1e-5;
  // Relative error denominator is max(|analytic|, |numeric|, floor).
  Scalar floor = 1e-3;
  // Per-target cap on checked entries; 0 checks everything. Sampling is seeded.
  std::size_t max_entries_per_target = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  Scalar max_relative_error = 0;
  std::size_t worst_parameter_index = 0;  // flat index across all targets
  std::string worst_target;
  std::size_t checked = 0;
  bool passed = true;
};

/// Finite-difference step: cbrt(machine epsilon) * max(1, |x|).
Scalar central_difference_step(Scalar x);

/// Compares analytic gradients against central differences of `objective`.
/// `objective` must re-evaluate from the current contents of every target.
/// Throws NumericError if an analytic gradient is non-finite.
GradCheckReport grad_check(const std::function<Scalar()>& objective,
                           std::span<const GradTarget> targets,
                           const GradCheckOptions& options = {});

}  // namespace aapt
