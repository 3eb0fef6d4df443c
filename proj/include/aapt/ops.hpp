#pragma once

// Forward and backward primitives over NHWC tensors.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "aapt/matrix.hpp"
#include "aapt/tensor.hpp"

namespace aapt {

enum class Padding { same, valid };
enum class Mode { train, infer };
enum class Activation { mish, relu };

/// Leading/trailing pad along one axis. Same padding totals k-1 with the odd
/// pixel on the bottom/right.
struct AxisPad {
  std::size_t before = 0;
  std::size_t after = 0;
};

AxisPad axis_pad(std::size_t kernel, Padding padding);
std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

/// Kernel stored as a Tensor with shape (k, k, C_in, C_out); depthwise kernels
/// use (k, k, C, 1). Bias, when present, has shape (1, 1, 1, C_out).
struct ConvWeights {
  Tensor kernel;
  std::optional<Tensor> bias;

  std::size_t kernel_size() const { return kernel.shape().n; }
  std::size_t in_channels() const { return kernel.shape().w; }
  std::size_t out_channels() const { return kernel.shape().c; }
  std::size_t param_count() const { return kernel.size() + (bias ? bias->size() : 0); }
};

ConvWeights make_conv_weights(std::size_t k, std::size_t c_in, std::size_t c_out, bool bias);
ConvWeights make_depthwise_weights(std::size_t k, std::size_t channels, bool bias);
// Same shapes, zero-filled.
ConvWeights zeros_like(const ConvWeights& w);

struct ConvGrads {
  Tensor dx;
  ConvWeights dw;
};

Tensor conv2d(const Tensor& x, const ConvWeights& w, std::size_t stride = 1,
              Padding padding = Padding::same);
ConvGrads conv2d_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy,
                          std::size_t stride = 1, Padding padding = Padding::same);

Tensor depthwise_conv2d(const Tensor& x, const ConvWeights& w, std::size_t stride = 1,
                        Padding padding = Padding::same);
ConvGrads depthwise_conv2d_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy,
                                    std::size_t stride = 1, Padding padding = Padding::same);

/// Depthwise k x k pass then 1x1 pointwise pass, stride 1, same padding.
Tensor depthwise_separable_conv(const Tensor& x, const ConvWeights& dw, const ConvWeights& pw);

/// Multiplications a separable layer saves relative to a standard conv:
/// k_f^2 * d_o / (denominator_kernel^2 + d_o).
double separable_reduction_factor(std::size_t kernel, std::size_t out_depth,
                                  std::size_t denominator_kernel);
inline double separable_reduction_factor(std::size_t kernel, std::size_t out_depth) {
  return separable_reduction_factor(kernel, out_depth, kernel);
}

Scalar softplus(Scalar x);
Scalar mish(Scalar x);
Scalar mish_derivative(Scalar x);

Tensor mish(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor activate(const Tensor& x, Activation act);
// dy * f'(x), elementwise.
Tensor activate_backward(const Tensor& x, const Tensor& dy, Activation act);

Matrix softmax_rows(const Matrix& m);
// Given softmax output p and upstream dp, returns d(logits).
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp);

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  Scalar momentum = 0.9;
  Scalar epsilon = 1e-5;

  explicit BatchNormParams(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

struct BatchNormCache {
  Tensor normalized;
  std::vector<Scalar> inv_std;
};

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};

/// Train mode normalizes with batch statistics (biased variance) and moves the
/// running statistics toward them; infer mode uses the running statistics.
Tensor batch_norm(const Tensor& x, BatchNormParams& p, Mode mode, BatchNormCache* cache = nullptr);
BatchNormGrads batch_norm_backward(const Tensor& dy, const BatchNormParams& p,
                                   const BatchNormCache& cache);

Tensor concat_channels(std::span<const Tensor> xs);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

/// Mean over the in-bounds part of each k x k window.
Tensor avg_pool(const Tensor& x, std::size_t k, std::size_t stride, Padding padding = Padding::same);
Tensor avg_pool_backward(const Shape& input, const Tensor& dy, std::size_t k, std::size_t stride,
                         Padding padding = Padding::same);

Scalar sum(const Tensor& x);
Scalar dot(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar s);
bool all_finite(std::span<const Scalar> v);

}  // namespace aapt
