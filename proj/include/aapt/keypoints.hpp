#pragma once

#include <array>
#include <cstddef>

namespace aapt {

inline constexpr std::size_t kNumKeypoints = 21;
inline constexpr std::size_t kNumOutputs = 2 * kNumKeypoints;

struct Keypoint {
  double x = 0;  // column, pixels
  double y = 0;  // row, pixels
};

struct KeypointSet {
  std::array<Keypoint, kNumKeypoints> points{};
  std::array<bool, kNumKeypoints> visible = all_visible();

  static constexpr std::array<bool, kNumKeypoints> all_visible() {
    std::array<bool, kNumKeypoints> v{};
    v.fill(true);
    return v;
  }
};

}  // namespace aapt
