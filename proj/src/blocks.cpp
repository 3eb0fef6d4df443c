#include "aapt/blocks.hpp"

#include <cmath>

#include "aapt/rng.hpp"

namespace aapt {

std::size_t BlockConfig::expanded_depth(std::size_t in_channels) const {
  return expansion * (expand_from == ExpansionBase::input ? in_channels : growth);
}

void BlockConfig::validate() const {
  if (expansion == 0) throw ConfigError("block: expansion e must be >= 1");
  if (growth == 0) throw ConfigError("block: growth k must be >= 1");
  if (aac_kernel == 0 || aac_kernel % 2 == 0) throw ConfigError("block: attention conv kernel must be odd");
  if (attention && (ratios.kappa <= 0 || ratios.u <= 0 || ratios.heads == 0)) {
    throw ConfigError("block: attention needs kappa > 0, u > 0, N_h >= 1");
  }
}

InvertedBottleneckWeights zero_inverted_bottleneck(std::size_t in_channels, const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t e = cfg.expanded_depth(in_channels);
  return {make_conv_weights(1, in_channels, e, cfg.bias), make_depthwise_weights(3, e, cfg.bias),
          make_conv_weights(1, e, cfg.growth, cfg.bias)};
}

AAInvertedBottleneckWeights zero_aa_inverted_bottleneck(std::size_t in_channels, std::size_t height,
                                                        std::size_t width, const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t e = cfg.expanded_depth(in_channels);
  AttentionShape shape;
  shape.heads = cfg.ratios.heads;
  shape.key_depth = attention_depth(cfg.ratios.kappa, e, cfg.ratios.heads);
  shape.value_depth = attention_depth(cfg.ratios.u, e, cfg.ratios.heads);
  shape.in_depth = e;
  shape.out_depth = e;
  shape.height = height;
  shape.width = width;
  if (shape.value_depth >= e) {
    throw ConfigError("block: attention depth d_v=" + std::to_string(shape.value_depth) +
                      " leaves no convolution channels out of " + std::to_string(e));
  }
  return {make_conv_weights(1, in_channels, e, cfg.bias), make_depthwise_weights(3, e, cfg.bias),
          make_conv_weights(cfg.aac_kernel, e, e - shape.value_depth, cfg.bias), AttentionParams(shape),
          make_conv_weights(1, e, cfg.growth, cfg.bias)};
}

// ---------------------------------------------------------------------------

InvertedBottleneck::InvertedBottleneck(std::size_t in_channels, const BlockConfig& cfg)
    : InvertedBottleneck(cfg, zero_inverted_bottleneck(in_channels, cfg)) {}

InvertedBottleneck::InvertedBottleneck(const BlockConfig& cfg, InvertedBottleneckWeights w)
    : cfg_(cfg),
      expand_(std::move(w.expand)),
      depthwise_(std::move(w.depthwise), 1, true),
      squeeze_(std::move(w.squeeze)) {
  cfg_.validate();
  const std::size_t e = expand_.weights().out_channels();
  if (expand_.weights().kernel_size() != 1 || squeeze_.weights().kernel_size() != 1 ||
      depthwise_.weights().in_channels() != e || squeeze_.weights().in_channels() != e) {
    throw ShapeError("inverted bottleneck: inconsistent weight shapes");
  }
}

void InvertedBottleneck::init(Rng& rng) {
  expand_.init(rng);
  depthwise_.init(rng);
  squeeze_.init(rng);
}

Tensor InvertedBottleneck::forward(const Tensor& x, Mode mode) {
  Tensor e = expand_.forward(x, mode);
  Tensor d = depthwise_.forward(activate(e, cfg_.activation), mode);
  Tensor y = squeeze_.forward(activate(d, cfg_.activation), mode);
  if (mode == Mode::train) {
    expanded_ = std::move(e);
    spatial_ = std::move(d);
  }
  return y;
}

Tensor InvertedBottleneck::backward(const Tensor& dy) {
  Tensor g = squeeze_.backward(dy);
  g = depthwise_.backward(activate_backward(spatial_, g, cfg_.activation));
  return expand_.backward(activate_backward(expanded_, g, cfg_.activation));
}

void InvertedBottleneck::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  expand_.collect_params(prefix + ".expand", out);
  depthwise_.collect_params(prefix + ".depthwise", out);
  squeeze_.collect_params(prefix + ".squeeze", out);
}

Shape InvertedBottleneck::output_shape(const Shape& in) const {
  if (in.c != expand_.weights().in_channels()) {
    throw ShapeError("inverted bottleneck: expects " + std::to_string(expand_.weights().in_channels()) +
                     " channels, got " + in.str());
  }
  return Shape{in.n, in.h, in.w, cfg_.growth};
}

void InvertedBottleneck::report(const std::string& name, const Shape& in,
                                std::vector<LayerStat>& out) const {
  const Shape e{in.n, in.h, in.w, expand_.weights().out_channels()};
  LayerStat s{name, output_shape(in),
              expand_.param_count() + depthwise_.param_count() + squeeze_.param_count(),
              expand_.macs(in) + depthwise_.macs(e) + squeeze_.macs(e),
              SeparableInfo{3, cfg_.growth}};
  out.push_back(std::move(s));
}

// ---------------------------------------------------------------------------

AAInvertedBottleneck::AAInvertedBottleneck(std::size_t in_channels, std::size_t height,
                                           std::size_t width, const BlockConfig& cfg)
    : AAInvertedBottleneck(cfg, zero_aa_inverted_bottleneck(in_channels, height, width, cfg)) {}

AAInvertedBottleneck::AAInvertedBottleneck(const BlockConfig& cfg, AAInvertedBottleneckWeights w)
    : cfg_(cfg),
      expand_(std::move(w.expand)),
      depthwise_(std::move(w.depthwise), 1, true),
      aac_(std::move(w.aac_conv), std::move(w.attention)),
      squeeze_(std::move(w.squeeze)) {
  cfg_.validate();
  const std::size_t e = expand_.weights().out_channels();
  if (depthwise_.weights().in_channels() != e || squeeze_.weights().in_channels() != e) {
    throw ShapeError("AA inverted bottleneck: inconsistent weight shapes");
  }
  if (aac_.attention().params().dims.out_depth != e || aac_.attention().params().dims.in_depth != e) {
    throw ShapeError("AA inverted bottleneck: augmented conv depth " +
                     std::to_string(aac_.attention().params().dims.out_depth) +
                     " cannot be added to depthwise output depth " + std::to_string(e));
  }
}

void AAInvertedBottleneck::init(Rng& rng) {
  expand_.init(rng);
  depthwise_.init(rng);
  aac_.init(rng);
  squeeze_.init(rng);
}

Tensor AAInvertedBottleneck::forward(const Tensor& x, Mode mode) {
  Tensor e = expand_.forward(x, mode);
  const Tensor a = activate(e, cfg_.activation);
  Tensor s = depthwise_.forward(a, mode);
  s += aac_.forward(a, mode);
  Tensor y = squeeze_.forward(activate(s, cfg_.activation), mode);
  if (mode == Mode::train) {
    expanded_ = std::move(e);
    summed_ = std::move(s);
  }
  return y;
}

Tensor AAInvertedBottleneck::backward(const Tensor& dy) {
  const Tensor ds = activate_backward(summed_, squeeze_.backward(dy), cfg_.activation);
  Tensor da = depthwise_.backward(ds);
  da += aac_.backward(ds);
  return expand_.backward(activate_backward(expanded_, da, cfg_.activation));
}

void AAInvertedBottleneck::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  expand_.collect_params(prefix + ".expand", out);
  depthwise_.collect_params(prefix + ".depthwise", out);
  aac_.collect_params(prefix + ".aac", out);
  squeeze_.collect_params(prefix + ".squeeze", out);
}

Shape AAInvertedBottleneck::output_shape(const Shape& in) const {
  const AttentionShape& d = aac_.attention().params().dims;
  if (in.c != expand_.weights().in_channels() || in.h != d.height || in.w != d.width) {
    throw ShapeError("AA inverted bottleneck: input " + in.str() + " does not match configuration");
  }
  return Shape{in.n, in.h, in.w, cfg_.growth};
}

void AAInvertedBottleneck::report(const std::string& name, const Shape& in,
                                  std::vector<LayerStat>& out) const {
  const Shape e{in.n, in.h, in.w, expand_.weights().out_channels()};
  out.push_back(LayerStat{name, output_shape(in),
                          expand_.param_count() + depthwise_.param_count() + aac_.param_count() +
                              squeeze_.param_count(),
                          expand_.macs(in) + depthwise_.macs(e) + aac_.macs(e) + squeeze_.macs(e),
                          SeparableInfo{3, cfg_.growth}});
}

// ---------------------------------------------------------------------------

DenseBlock::DenseBlock(std::size_t in_channels, std::size_t num_layers, std::size_t height,
                       std::size_t width, const BlockConfig& cfg) {
  if (num_layers == 0) throw ConfigError("dense block: needs at least one layer");
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < num_layers; ++i) {
    if (cfg.attention) {
      layers_.push_back(std::make_unique<AAInvertedBottleneck>(c, height, width, cfg));
    } else {
      layers_.push_back(std::make_unique<InvertedBottleneck>(c, cfg));
    }
    c += cfg.growth;
  }
}

DenseBlock::DenseBlock(std::vector<std::unique_ptr<Layer>> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("dense block: needs at least one layer");
}

void DenseBlock::init(Rng& rng) {
  for (auto& l : layers_) {
    if (auto* ib = dynamic_cast<InvertedBottleneck*>(l.get())) ib->init(rng);
    if (auto* aa = dynamic_cast<AAInvertedBottleneck*>(l.get())) aa->init(rng);
  }
}

Tensor DenseBlock::forward(const Tensor& x, Mode mode) {
  Tensor features = x;
  if (mode == Mode::train) input_channels_.clear();
  for (auto& l : layers_) {
    if (mode == Mode::train) input_channels_.push_back(features.shape().c);
    Tensor out = l->forward(features, mode);
    const Tensor parts[] = {std::move(features), std::move(out)};
    features = concat_channels(parts);
  }
  return features;
}

Tensor DenseBlock::backward(const Tensor& dy) {
  Tensor g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t c = input_channels_[i];
    Tensor prev = slice_channels(g, 0, c);
    prev += layers_[i]->backward(slice_channels(g, c, g.shape().c - c));
    g = std::move(prev);
  }
  return g;
}

void DenseBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_params(prefix + ".layer" + std::to_string(i + 1), out);
  }
}

Shape DenseBlock::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s.c += l->output_shape(s).c;
  return s;
}

void DenseBlock::report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const {
  Shape s = in;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t before = out.size();
    layers_[i]->report(name + ".layer" + std::to_string(i + 1), s, out);
    s.c += layers_[i]->output_shape(s).c;
    for (std::size_t j = before; j < out.size(); ++j) out[j].output = s;
  }
}

// ---------------------------------------------------------------------------

TransitionLayer::TransitionLayer(std::size_t in_channels, std::size_t out_channels, Pooling pooling,
                                 std::size_t blur_n)
    : conv_(make_conv_weights(1, in_channels, out_channels, false)),
      pooling_(pooling),
      filter_(make_blur_filter(blur_n)),
      bn_(out_channels),
      dgamma_(bn_.gamma.shape()),
      dbeta_(bn_.beta.shape()) {}

void TransitionLayer::init(Rng& rng) { conv_.init(rng); }

Tensor TransitionLayer::forward(const Tensor& x, Mode mode) {
  Tensor r = conv_.forward(x, mode);
  Tensor p;
  switch (pooling_) {
    case Pooling::blur: p = blur_pool(r, filter_, 2); break;
    case Pooling::average: p = avg_pool(r, 2, 2); break;
    case Pooling::max: p = max_pool(r, 2, 2); break;
  }
  Tensor y = batch_norm(p, bn_, mode, mode == Mode::train ? &bn_cache_ : nullptr);
  if (mode == Mode::train) reduced_ = std::move(r);
  return y;
}

Tensor TransitionLayer::backward(const Tensor& dy) {
  BatchNormGrads g = batch_norm_backward(dy, bn_, bn_cache_);
  dgamma_ += g.dgamma;
  dbeta_ += g.dbeta;
  Tensor dr;
  switch (pooling_) {
    case Pooling::blur: dr = blur_pool_backward(reduced_.shape(), g.dx, filter_, 2); break;
    case Pooling::average: dr = avg_pool_backward(reduced_.shape(), g.dx, 2, 2); break;
    case Pooling::max: dr = max_pool_backward(reduced_, g.dx, 2, 2); break;
  }
  return conv_.backward(dr);
}

void TransitionLayer::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv_.collect_params(prefix + ".conv", out);
  collect_tensor(prefix + ".bn.gamma", bn_.gamma, &dgamma_, out);
  collect_tensor(prefix + ".bn.beta", bn_.beta, &dbeta_, out);
  collect_tensor(prefix + ".bn.running_mean", bn_.running_mean, nullptr, out);
  collect_tensor(prefix + ".bn.running_var", bn_.running_var, nullptr, out);
}

Shape TransitionLayer::output_shape(const Shape& in) const {
  if (in.c != conv_.weights().in_channels()) {
    throw ShapeError("transition: expects " + std::to_string(conv_.weights().in_channels()) +
                     " channels, got " + in.str());
  }
  return Shape{in.n, (in.h + 1) / 2, (in.w + 1) / 2, conv_.weights().out_channels()};
}

void TransitionLayer::report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const {
  const Shape o = output_shape(in);
  std::uint64_t pool_macs = 0;
  if (pooling_ == Pooling::blur) pool_macs = std::uint64_t{o.h} * o.w * o.c * filter_.m * filter_.m;
  out.push_back(LayerStat{name, o, conv_.param_count() + bn_.gamma.size() + bn_.beta.size(),
                          conv_.macs(in) + pool_macs, std::nullopt});
}

// ---------------------------------------------------------------------------

RegressionHead::RegressionHead(std::size_t in_channels, std::size_t pool_window, std::size_t outputs)
    : window_(pool_window), conv_(make_conv_weights(1, in_channels, outputs, true)) {}

void RegressionHead::init(Rng& rng) {
  const Shape& k = conv_.weights().kernel.shape();
  conv_.init_uniform(rng, static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(k.w + k.c))));
}

Tensor RegressionHead::forward(const Tensor& x, Mode mode) {
  output_shape(x.shape());
  if (mode == Mode::train) input_shape_ = x.shape();
  return conv_.forward(avg_pool(x, window_, window_, Padding::valid), mode);
}

Tensor RegressionHead::backward(const Tensor& dy) {
  return avg_pool_backward(input_shape_, conv_.backward(dy), window_, window_, Padding::valid);
}

void RegressionHead::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv_.collect_params(prefix + ".conv", out);
}

Shape RegressionHead::output_shape(const Shape& in) const {
  if (in.h != window_ || in.w != window_ || in.c != conv_.weights().in_channels()) {
    throw ShapeError("head: expects " + std::to_string(window_) + "x" + std::to_string(window_) + "x" +
                     std::to_string(conv_.weights().in_channels()) + ", got " + in.str());
  }
  return Shape{in.n, 1, 1, conv_.weights().out_channels()};
}

void RegressionHead::report(const std::string& name, const Shape& in, std::vector<LayerStat>& out) const {
  const Shape pooled{in.n, 1, 1, in.c};
  out.push_back(LayerStat{name + ".pool", pooled, 0, std::uint64_t{in.h} * in.w * in.c, std::nullopt});
  out.push_back(LayerStat{name + ".conv", output_shape(in), conv_.param_count(), conv_.macs(pooled),
                          std::nullopt});
}

// ---------------------------------------------------------------------------

Tensor inverted_bottleneck(const Tensor& x, const BlockConfig& cfg, const InvertedBottleneckWeights& w) {
  InvertedBottleneck layer(cfg, w);
  layer.output_shape(x.shape());
  return layer.forward(x, Mode::infer);
}

Tensor aa_inverted_bottleneck(const Tensor& x, const BlockConfig& cfg,
                              const AAInvertedBottleneckWeights& w) {
  AAInvertedBottleneck layer(cfg, w);
  layer.output_shape(x.shape());
  return layer.forward(x, Mode::infer);
}

}  // namespace aapt
