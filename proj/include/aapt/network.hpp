#pragma once

// Full keypoint-regression network: dense blocks of (attention-augmented)
// inverted bottlenecks separated by transition layers, a final bottleneck, and
// a pooled 1x1 regression head with 42 outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aapt/blocks.hpp"
#include "aapt/keypoints.hpp"
#include "aapt/layers.hpp"

namespace aapt {

struct NetworkConfig {
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t input_channels = 3;
  std::vector<std::size_t> blocks{8, 8, 6, 8, 10, 12, 14, 32};
  std::vector<std::size_t> transitions{64, 64, 64, 64, 64, 128, 128};
  bool attention = true;
  std::size_t attention_from = 3;  // 1-based index of the first attention dense block
  Pooling pooling = Pooling::blur;
  Activation activation = Activation::mish;
  std::size_t growth = 10;
  std::size_t expansion = 4;
  ExpansionBase expand_from = ExpansionBase::growth;
  AttentionRatios ratios;
  std::size_t blur_n = 2;
  std::size_t aac_kernel = 3;
  bool bias = true;
  std::size_t attention_budget = 4096;  // H*W above which a warning is recorded

  void validate() const;
  /// Input extent followed by the extent after every transition and the head.
  std::vector<std::size_t> spatial_trace() const;
  BlockConfig block_config(bool with_attention) const;

  /// Canonical key = value text; parse(to_text()) reproduces the config.
  std::string to_text() const;
  static NetworkConfig parse(const std::string& text);
  static NetworkConfig load(const std::filesystem::path& path);
  /// Applies key = value lines on top of `base`.
  static NetworkConfig parse(const std::string& text, NetworkConfig base);
  std::uint64_t hash() const;

  /// "default", "tiny", "gradcheck", or "arch1" .. "arch12".
  static NetworkConfig preset(const std::string& name);
  /// Attention / pooling / activation switches of ablation architecture 1..12.
  static NetworkConfig ablation(int arch);
  static NetworkConfig ablation(int arch, NetworkConfig base);
};

std::uint64_t fnv1a64(const std::string& bytes);

class Network {
 public:
  /// Zero weights; call initialize() or load weights before use.
  explicit Network(NetworkConfig cfg);

  void initialize(std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// N x 1 x 1 x 42 normalized coordinates (x0, y0, x1, y1, ...).
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  /// Keypoints in input-pixel units, one set per batch item (infer mode).
  std::vector<KeypointSet> predict(const Tensor& x);

  std::vector<ParamRef> params();
  void zero_grad();
  std::vector<LayerStat> layer_stats() const;
  std::vector<std::size_t> spatial_trace() const { return cfg_.spatial_trace(); }

  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i].layer; }
  const std::string& layer_name(std::size_t i) const { return layers_[i].name; }

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Layer> layer;
  };
  NetworkConfig cfg_;
  std::vector<Entry> layers_;
  std::vector<std::string> warnings_;
};

Network build_network(const NetworkConfig& cfg, std::uint64_t seed);

/// Converts 42 normalized outputs of batch item `n` to pixel keypoints.
KeypointSet decode_keypoints(const Tensor& out, std::size_t n, std::size_t height, std::size_t width);
/// Inverse of decode_keypoints for one item, written into `out`.
void encode_keypoints(const KeypointSet& k, std::size_t height, std::size_t width, Tensor& out,
                      std::size_t n);

struct ParamReport {
  std::size_t total = 0;
  std::vector<LayerStat> items;
};

struct FlopReport {
  std::vector<LayerStat> items;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;  // 2 per multiply-accumulate
};

ParamReport count_params(const Network& net);
FlopReport count_flops(const Network& net, const Shape& input);

// Weights file, little-endian:
//   char[4] "AAPW", u32 version, u64 config hash, u64 config text length,
//   config text, u64 tensor count, then per tensor: u32 name length, name,
//   tensor blob (see serialize.hpp).
void save_weights(Network& net, const std::filesystem::path& path);
Network load_weights(const std::filesystem::path& path);
/// Also rejects files whose config hash differs from `expected`.
Network load_weights(const std::filesystem::path& path, const NetworkConfig& expected);

}  // namespace aapt
