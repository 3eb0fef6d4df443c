#include "aapt/layers.hpp"

#include <cmath>

#include "aapt/rng.hpp"

namespace aapt {

void collect_tensor(const std::string& name, Tensor& value, Tensor* grad, std::vector<ParamRef>& out) {
  out.push_back(ParamRef{name, value.shape(), value.values(),
                         grad ? grad->values() : std::span<Scalar>{}});
}

Conv::Conv(ConvWeights w, std::size_t stride, bool depthwise)
    : w_(std::move(w)), g_(zeros_like(w_)), stride_(stride), depthwise_(depthwise) {
  if (depthwise_ && w_.kernel.shape().c != 1) throw ShapeError("depthwise kernel must be (k, k, C, 1)");
}

Tensor Conv::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::train) input_ = x;
  return depthwise_ ? depthwise_conv2d(x, w_, stride_) : conv2d(x, w_, stride_);
}

Tensor Conv::backward(const Tensor& dy) {
  ConvGrads g = depthwise_ ? depthwise_conv2d_backward(input_, w_, dy, stride_)
                           : conv2d_backward(input_, w_, dy, stride_);
  g_.kernel += g.dw.kernel;
  if (g_.bias) *g_.bias += *g.dw.bias;
  return std::move(g.dx);
}

void Conv::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  collect_tensor(prefix + ".kernel", w_.kernel, &g_.kernel, out);
  if (w_.bias) collect_tensor(prefix + ".bias", *w_.bias, &*g_.bias, out);
}

void Conv::init_uniform(Rng& rng, Scalar bound) {
  for (Scalar& v : w_.kernel.values()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  if (w_.bias) w_.bias->fill(0);
}

void Conv::init(Rng& rng) {
  const Shape& k = w_.kernel.shape();
  const std::size_t fan_in = depthwise_ ? k.n * k.h : k.n * k.h * k.w;
  init_uniform(rng, static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(fan_in))));
}

Shape Conv::output_shape(const Shape& in) const {
  const std::size_t k = w_.kernel_size();
  return Shape{in.n, output_extent(in.h, k, stride_, Padding::same),
               output_extent(in.w, k, stride_, Padding::same),
               depthwise_ ? w_.in_channels() : w_.out_channels()};
}

std::uint64_t Conv::macs(const Shape& in) const {
  const Shape out = output_shape(in);
  const std::uint64_t taps = w_.kernel_size() * w_.kernel_size();
  const std::uint64_t per_pixel = depthwise_ ? taps * out.c : taps * w_.in_channels() * out.c;
  return static_cast<std::uint64_t>(out.h) * out.w * per_pixel;
}

}  // namespace aapt
