#pragma once

// Anti-aliased downsampling and the pooling baselines it is compared against.

#include <cstddef>
#include <functional>
#include <vector>

#include "aapt/ops.hpp"
#include "aapt/tensor.hpp"

namespace aapt {

enum class Pooling { blur, average, max };

/// Box of n ones.
std::vector<Scalar> make_box(std::size_t n);

/// Separable low-pass kernel built from a box of length n:
/// taps = box * box (length m = 2n - 1), kernel = taps (x) taps, unit sum.
struct BlurFilter {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Scalar> taps;     // unnormalized self-convolved box, length m
  std::vector<Scalar> kernel;   // m x m row-major, normalized to unit sum

  Scalar at(std::size_t r, std::size_t c) const { return kernel[r * m + c]; }
};

BlurFilter make_blur_filter(std::size_t n);

/// Reflect-padded (no edge repeat) depthwise convolution with the blur kernel,
/// sampled every `stride` pixels. Output extent is ceil(in / stride).
Tensor blur_pool(const Tensor& x, const BlurFilter& f, std::size_t stride = 2);
Tensor blur_pool_backward(const Shape& input, const Tensor& dy, const BlurFilter& f,
                          std::size_t stride = 2);

/// Windowed maximum over in-bounds elements.
Tensor max_pool(const Tensor& x, std::size_t k, std::size_t stride, Padding padding = Padding::same);
Tensor max_pool_backward(const Tensor& x, const Tensor& dy, std::size_t k, std::size_t stride,
                         Padding padding = Padding::same);

/// Index into [0, extent) by mirror reflection about the end pixels.
std::size_t reflect_index(long long i, std::size_t extent);

enum class Boundary { zero, reflect };

/// out[h][w] = x[h - dh][w - dw]; samples outside the input follow `boundary`.
Tensor shift(const Tensor& x, long long dh, long long dw, Boundary boundary = Boundary::zero);

/// A feature map function with its total subsampling factor and the radius
/// (in input pixels) of the window that feeds each output pixel.
struct FeatureExtractor {
  std::function<Tensor(const Tensor&)> apply;
  std::size_t stride = 1;
  std::size_t radius = 0;
};

/// Normalized L2 distance between F(Shift(x)) and Shift(F(x)) over outputs
/// whose receptive field avoids every boundary. Output shifts that are not a
/// whole number of pixels are realized by bilinear interpolation.
/// Throws ShapeError when no interior output remains.
/// Stride-2 pooling on its own.
FeatureExtractor pooling_extractor(Pooling pooling, std::size_t blur_n = 2);
/// Fixed convolution, ReLU, then stride-2 pooling.
FeatureExtractor conv_pooling_extractor(ConvWeights conv, Pooling pooling, std::size_t blur_n = 2);

Scalar shift_equivariance_deviation(const FeatureExtractor& f, const Tensor& x, long long dh,
                                    long long dw);

}  // namespace aapt
