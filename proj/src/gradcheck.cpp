#include "aapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "aapt/rng.hpp"

namespace aapt {

Scalar central_difference_step(Scalar x) {
  static const Scalar base = std::cbrt(std::numeric_limits<Scalar>::epsilon());
  return base * std::max<Scalar>(1, std::abs(x));
}

GradCheckReport grad_check(const std::function<Scalar()>& objective,
                           std::span<const GradTarget> targets, const GradCheckOptions& options) {
  GradCheckReport report;
  Rng rng(options.seed);
  std::size_t offset = 0;
  for (const GradTarget& t : targets) {
    if (t.values.size() != t.analytic.size()) {
      throw ShapeError("grad_check: target '" + t.name + "' has mismatched gradient length");
    }
    std::vector<std::size_t> entries(t.values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_target && entries.size() > options.max_entries_per_target) {
      for (std::size_t i = 0; i < options.max_entries_per_target; ++i) {
        std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      }
      entries.resize(options.max_entries_per_target);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const Scalar a = t.analytic[i];
      if (!std::isfinite(a)) {
        throw NumericError("grad_check: non-finite analytic gradient in '" + t.name + "' at index " +
                           std::to_string(i));
      }
      const Scalar original = t.values[i];
      const Scalar h = central_difference_step(original);
      t.values[i] = original + h;
      const Scalar up = objective();
      t.values[i] = original - h;
      const Scalar down = objective();
      t.values[i] = original;
      const Scalar numeric = (up - down) / (2 * h);
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const Scalar err = std::isfinite(numeric) ? std::abs(a - numeric) / denom
                                                : std::numeric_limits<Scalar>::infinity();
      ++report.checked;
      if (err > report.max_relative_error || !std::isfinite(err)) {
        report.max_relative_error = err;
        report.worst_parameter_index = offset + i;
        report.worst_target = t.name;
      }
    }
    offset += t.values.size();
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace aapt
