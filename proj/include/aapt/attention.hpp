#pragma once

// Multi-head self-attention over flattened spatial positions with learned
// relative width/height embeddings, and the attention-augmented convolution
// that concatenates it with a regular convolution.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "aapt/layers.hpp"
#include "aapt/matrix.hpp"
#include "aapt/ops.hpp"
#include "aapt/tensor.hpp"

namespace aapt {

class Rng;

struct AttentionShape {
  std::size_t heads = 1;
  std::size_t key_depth = 0;    // d_k, summed over heads
  std::size_t value_depth = 0;  // d_v, summed over heads
  std::size_t in_depth = 0;     // F_in
  std::size_t out_depth = 0;    // F_out of the augmented convolution
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t key_depth_per_head() const { return key_depth / heads; }
  std::size_t value_depth_per_head() const { return value_depth / heads; }
  double kappa() const;
  double u() const;
  void validate() const;
};

/// Depth = ratio * out_depth rounded down to a multiple of `heads`, never
/// below `heads`.
std::size_t attention_depth(double ratio, std::size_t out_depth, std::size_t heads);

/// W_Q, W_K: F_in x d_k and W_V: F_in x d_v with heads side by side in the
/// columns. W_O: d_v x d_v. Relative tables stack one (2W-1) x d_k^h
/// (resp. (2H-1) x d_k^h) block per head; row (offset + W - 1) of a block
/// holds the embedding for horizontal offset j_x - i_x.
struct AttentionParams {
  AttentionShape dims;
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;
  Matrix rel_w;
  Matrix rel_h;

  AttentionParams() = default;
  explicit AttentionParams(const AttentionShape& shape);

  /// Projections U(-1/sqrt(F_in), 1/sqrt(F_in)) (W_O uses d_v as fan-in);
  /// embeddings N(0, d_k^h^-1/2).
  void init(Rng& rng);

  Matrix head_query(const Matrix& x, std::size_t head) const;
  Matrix head_key(const Matrix& x, std::size_t head) const;
  Matrix head_value(const Matrix& x, std::size_t head) const;
  Matrix head_rel_w(std::size_t head) const;
  Matrix head_rel_h(std::size_t head) const;

  std::size_t param_count() const;
  void collect_params(const std::string& prefix, AttentionParams* grad, std::vector<ParamRef>& out);
};

/// Row h*W + w of the result is the channel vector at (batch, h, w).
Matrix flatten_spatial(const Tensor& x, std::size_t batch = 0);
/// Inverse of flatten_spatial for a single batch item.
Tensor unflatten_spatial(const Matrix& m, std::size_t height, std::size_t width);

struct RelativeLogits {
  Matrix height;  // S_rel_H
  Matrix width;   // S_rel_W
};

/// Unscaled relative terms: S_rel_W(i, j) = q_i . r^W[j_x - i_x] and
/// S_rel_H(i, j) = q_i . r^H[j_y - i_y]. `rel_w`/`rel_h` are single-head tables.
RelativeLogits relative_logits(const Matrix& q, const Matrix& rel_w, const Matrix& rel_h,
                               std::size_t height, std::size_t width);

/// softmax((Q K^T + S_rel_H + S_rel_W) / sqrt(d_k^h)) V for one head.
Matrix attention_head(const Matrix& x, const AttentionParams& p, std::size_t head,
                      const RelativeLogits& rel);

/// Concat over heads, then W_O. HW x d_v.
Matrix multi_head_attention(const Matrix& x, const AttentionParams& p);

/// concat[conv(x), MHA(x)] along channels; conv is stride 1, same padding.
Tensor attention_augmented_conv(const Tensor& x, const ConvWeights& conv_w, const AttentionParams& p);

/// Trainable multi-head attention on NHWC tensors (output N x H x W x d_v).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  explicit MultiHeadAttention(AttentionParams params);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);

  const AttentionParams& params() const { return p_; }
  AttentionParams& params() { return p_; }
  const AttentionParams& grads() const { return g_; }
  std::uint64_t macs() const;

 private:
  struct HeadCache {
    Matrix q, k, v, weights;
  };
  struct ItemCache {
    Matrix x;
    Matrix concat;
    std::vector<HeadCache> heads;
  };

  AttentionParams p_;
  AttentionParams g_;
  std::vector<ItemCache> cache_;
};

/// Trainable attention-augmented convolution.
class AugmentedConv {
 public:
  AugmentedConv() = default;
  AugmentedConv(ConvWeights conv, AttentionParams attention);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  void init(Rng& rng);

  const Conv& conv() const { return conv_; }
  Conv& conv() { return conv_; }
  const MultiHeadAttention& attention() const { return mha_; }
  MultiHeadAttention& attention() { return mha_; }
  std::size_t param_count() const;
  std::uint64_t macs(const Shape& in) const;

 private:
  Conv conv_;
  MultiHeadAttention mha_;
};

}  // namespace aapt
