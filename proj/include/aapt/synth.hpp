#pragma once

#include <cstddef>
#include <cstdint>

#include "aapt/keypoints.hpp"
#include "aapt/tensor.hpp"

namespace aapt {

struct Sample {
  Tensor image;  // 1 x S x S x 3
  KeypointSet keypoints;
};

/// Stick-figure hand: wrist plus five 4-joint fingers, 21 keypoints on
/// integer pixels. Red holds unit-peak Gaussian blobs at the joints, green the
/// bones; every channel carries small background noise.
Sample synth_hand(std::uint64_t seed, std::size_t image_size);

}  // namespace aapt
