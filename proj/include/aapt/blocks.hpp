#pragma once

// Composite layers: inverted bottleneck, attention-augmented inverted
// bottleneck, dense block, transition layer and the regression head.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "aapt/attention.hpp"
#include "aapt/blurpool.hpp"
#include "aapt/layers.hpp"

namespace aapt {

class Rng;

/// What the expansion factor multiplies: the layer's input depth (e * C_in)
/// or the growth rate (e * k, the DenseNet-BC bottleneck width).
enum class ExpansionBase { input, growth };

struct AttentionRatios {
  double kappa = 0.25;
  double u = 0.25;
  std::size_t heads = 4;
};

struct BlockConfig {
  std::size_t expansion = 4;
  std::size_t growth = 10;
  Activation activation = Activation::mish;
  bool attention = false;
  AttentionRatios ratios;
  ExpansionBase expand_from = ExpansionBase::input;
  bool bias = true;
  std::size_t aac_kernel = 3;

  std::size_t expanded_depth(std::size_t in_channels) const;
  void validate() const;
};

struct InvertedBottleneckWeights {
  ConvWeights expand;     // 1x1, C_in -> E
  ConvWeights depthwise;  // 3x3 depthwise on E
  ConvWeights squeeze;    // 1x1, E -> k
};

struct AAInvertedBottleneckWeights {
  ConvWeights expand;
  ConvWeights depthwise;
  ConvWeights aac_conv;  // E -> E - d_v
  AttentionParams attention;
  ConvWeights squeeze;
};

InvertedBottleneckWeights zero_inverted_bottleneck(std::size_t in_channels, const BlockConfig& cfg);
AAInvertedBottleneckWeights zero_aa_inverted_bottleneck(std::size_t in_channels, std::size_t height,
                                                        std::size_t width, const BlockConfig& cfg);

/// 1x1 expand -> act -> 3x3 depthwise -> act -> 1x1 squeeze to k channels.
class InvertedBottleneck : public Layer {
 public:
  InvertedBottleneck(std::size_t in_channels, const BlockConfig& cfg);
  InvertedBottleneck(const BlockConfig& cfg, InvertedBottleneckWeights weights);

  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  Shape output_shape(const Shape& in) const override;
  void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const override;

  Conv& expand() { return expand_; }
  Conv& depthwise() { return depthwise_; }
  Conv& squeeze() { return squeeze_; }

 private:
  BlockConfig cfg_;
  Conv expand_, depthwise_, squeeze_;
  Tensor expanded_, spatial_;  // pre-activation caches
};

/// 1x1 expand -> act -> {3x3 depthwise, attention-augmented conv} -> add ->
/// act -> 1x1 squeeze to k channels. The augmented conv outputs E channels
/// (E - d_v from its convolution, d_v from attention).
class AAInvertedBottleneck : public Layer {
 public:
  AAInvertedBottleneck(std::size_t in_channels, std::size_t height, std::size_t width,
                       const BlockConfig& cfg);
  AAInvertedBottleneck(const BlockConfig& cfg, AAInvertedBottleneckWeights weights);

  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  Shape output_shape(const Shape& in) const override;
  void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const override;

  Conv& expand() { return expand_; }
  Conv& depthwise() { return depthwise_; }
  AugmentedConv& augmented() { return aac_; }
  Conv& squeeze() { return squeeze_; }

 private:
  BlockConfig cfg_;
  Conv expand_, depthwise_;
  AugmentedConv aac_;
  Conv squeeze_;
  Tensor expanded_, summed_;
};

/// Each layer consumes the concatenation of the block input and every earlier
/// layer's output; the block output is that running concatenation.
class DenseBlock : public Layer {
 public:
  /// Builds `num_layers` bottleneck layers (attention-augmented when
  /// cfg.attention) for inputs of `in_channels` at height x width.
  DenseBlock(std::size_t in_channels, std::size_t num_layers, std::size_t height, std::size_t width,
             const BlockConfig& cfg);
  explicit DenseBlock(std::vector<std::unique_ptr<Layer>> layers);

  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  Shape output_shape(const Shape& in) const override;
  void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const override;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::size_t> input_channels_;  // per layer, recorded in forward
};

/// 1x1 conv (no bias) -> stride-2 pooling -> batch norm.
class TransitionLayer : public Layer {
 public:
  TransitionLayer(std::size_t in_channels, std::size_t out_channels, Pooling pooling,
                  std::size_t blur_n = 2);

  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  Shape output_shape(const Shape& in) const override;
  void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const override;

  Conv& conv() { return conv_; }
  BatchNormParams& norm() { return bn_; }
  Pooling pooling() const { return pooling_; }

 private:
  Conv conv_;
  Pooling pooling_;
  BlurFilter filter_;
  BatchNormParams bn_;
  Tensor dgamma_, dbeta_;
  Tensor reduced_;
  BatchNormCache bn_cache_;
};

/// Average pooling with a window covering the remaining spatial extent, then
/// a 1x1 conv with bias to the regression outputs. No output activation.
class RegressionHead : public Layer {
 public:
  RegressionHead(std::size_t in_channels, std::size_t pool_window, std::size_t outputs);

  void init(Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  Shape output_shape(const Shape& in) const override;
  void report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const override;

  Conv& conv() { return conv_; }

 private:
  std::size_t window_;
  Conv conv_;
  Shape input_shape_;
};

/// Stateless wrappers over the layer classes, evaluated in infer mode.
Tensor inverted_bottleneck(const Tensor& x, const BlockConfig& cfg, const InvertedBottleneckWeights& w);
Tensor aa_inverted_bottleneck(const Tensor& x, const BlockConfig& cfg, const AAInvertedBottleneckWeights& w);

}  // namespace aapt
