#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aapt/ops.hpp"
#include "aapt/tensor.hpp"

namespace aapt {

/// Mutable view of one named parameter block and its gradient accumulator.
/// Non-trainable state (batch-norm running statistics) has an empty `grad`.
struct ParamRef {
  std::string name;
  Shape shape;
  std::span<Scalar> value;
  std::span<Scalar> grad;

  bool trainable() const { return !grad.empty(); }
};

struct SeparableInfo {
  std::size_t kernel = 3;
  std::size_t out_depth = 0;
};

/// One itemized line of the parameter/FLOP accounting.
struct LayerStat {
  std::string name;
  Shape output;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  std::optional<SeparableInfo> separable;
};

class Layer {
 public:
  virtual ~Layer() = default;

  /// Train mode caches what backward needs; infer mode leaves the layer untouched.
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input) for the
  /// most recent train-mode forward.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const = 0;
};

class Rng;

/// Trainable convolution (standard or depthwise), stride and same padding.
class Conv {
 public:
  Conv() = default;
  Conv(ConvWeights w, std::size_t stride = 1, bool depthwise = false);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);

  /// He-uniform kernel, zero bias.
  void init(Rng& rng);
  void init_uniform(Rng& rng, Scalar bound);

  const ConvWeights& weights() const { return w_; }
  ConvWeights& weights() { return w_; }
  const ConvWeights& grads() const { return g_; }
  bool depthwise() const { return depthwise_; }

  Shape output_shape(const Shape& in) const;
  std::uint64_t macs(const Shape& in) const;
  std::size_t param_count() const { return w_.param_count(); }

 private:
  ConvWeights w_;
  ConvWeights g_;
  std::size_t stride_ = 1;
  bool depthwise_ = false;
  Tensor input_;
};

void collect_tensor(const std::string& name, Tensor& value, Tensor* grad, std::vector<ParamRef>& out);

}  // namespace aapt
