#include "aapt/attention.hpp"

#include <cmath>
#include <string>

#include "aapt/rng.hpp"

namespace aapt {

double AttentionShape::kappa() const {
  return static_cast<double>(key_depth) / static_cast<double>(out_depth);
}

double AttentionShape::u() const {
  return static_cast<double>(value_depth) / static_cast<double>(out_depth);
}

void AttentionShape::validate() const {
  if (heads == 0) throw ConfigError("attention: head count must be >= 1");
  if (key_depth == 0 || value_depth == 0) throw ConfigError("attention: d_k and d_v must be positive");
  if (key_depth % heads || value_depth % heads) {
    throw ConfigError("attention: d_k=" + std::to_string(key_depth) + " and d_v=" +
                      std::to_string(value_depth) + " must be divisible by N_h=" + std::to_string(heads));
  }
  if (in_depth == 0 || out_depth < value_depth) {
    throw ConfigError("attention: need F_in > 0 and F_out >= d_v");
  }
  if (height == 0 || width == 0) throw ConfigError("attention: spatial extent must be positive");
}

std::size_t attention_depth(double ratio, std::size_t out_depth, std::size_t heads) {
  if (ratio <= 0 || heads == 0) throw ConfigError("attention ratios and head count must be positive");
  const auto raw = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(out_depth) + 1e-9));
  const std::size_t rounded = raw / heads * heads;
  return rounded < heads ? heads : rounded;
}

AttentionParams::AttentionParams(const AttentionShape& shape)
    : dims(shape),
      wq(shape.in_depth, shape.key_depth),
      wk(shape.in_depth, shape.key_depth),
      wv(shape.in_depth, shape.value_depth),
      wo(shape.value_depth, shape.value_depth),
      rel_w(shape.heads * (2 * shape.width - 1), shape.key_depth_per_head()),
      rel_h(shape.heads * (2 * shape.height - 1), shape.key_depth_per_head()) {
  dims.validate();
}

void AttentionParams::init(Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(dims.in_depth));
  for (Matrix* m : {&wq, &wk, &wv}) {
    for (Scalar& v : m->data) v = static_cast<Scalar>(rng.uniform(-a, a));
  }
  const double ao = 1.0 / std::sqrt(static_cast<double>(dims.value_depth));
  for (Scalar& v : wo.data) v = static_cast<Scalar>(rng.uniform(-ao, ao));
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dims.key_depth_per_head()));
  for (Matrix* m : {&rel_w, &rel_h}) {
    for (Scalar& v : m->data) v = static_cast<Scalar>(sigma * rng.normal());
  }
}

Matrix AttentionParams::head_query(const Matrix& x, std::size_t head) const {
  const std::size_t d = dims.key_depth_per_head();
  return matmul(x, column_block(wq, head * d, d));
}

Matrix AttentionParams::head_key(const Matrix& x, std::size_t head) const {
  const std::size_t d = dims.key_depth_per_head();
  return matmul(x, column_block(wk, head * d, d));
}

Matrix AttentionParams::head_value(const Matrix& x, std::size_t head) const {
  const std::size_t d = dims.value_depth_per_head();
  return matmul(x, column_block(wv, head * d, d));
}

namespace {

Matrix row_block(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols);
  std::copy_n(m.row(begin), count * m.cols, out.data.begin());
  return out;
}

void add_row_block(Matrix& dst, const Matrix& src, std::size_t begin) {
  Scalar* d = dst.row(begin);
  for (std::size_t i = 0; i < src.data.size(); ++i) d[i] += src.data[i];
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

std::size_t table_center(const Matrix& table, std::size_t extent, const char* axis) {
  if (table.rows % 2 == 0 || table.rows < 2 * extent - 1) {
    throw ShapeError(std::string("relative_logits: ") + axis + " embedding table has " +
                     std::to_string(table.rows) + " rows, need an odd count >= " +
                     std::to_string(2 * extent - 1));
  }
  return (table.rows - 1) / 2;
}

}  // namespace

Matrix AttentionParams::head_rel_w(std::size_t head) const {
  const std::size_t rows = 2 * dims.width - 1;
  return row_block(rel_w, head * rows, rows);
}

Matrix AttentionParams::head_rel_h(std::size_t head) const {
  const std::size_t rows = 2 * dims.height - 1;
  return row_block(rel_h, head * rows, rows);
}

std::size_t AttentionParams::param_count() const {
  return wq.data.size() + wk.data.size() + wv.data.size() + wo.data.size() + rel_w.data.size() +
         rel_h.data.size();
}

void AttentionParams::collect_params(const std::string& prefix, AttentionParams* grad,
                                     std::vector<ParamRef>& out) {
  auto add = [&](const char* name, Matrix& m, Matrix* g) {
    out.push_back(ParamRef{prefix + "." + name, Shape{1, 1, m.rows, m.cols}, m.data,
                           g ? std::span<Scalar>(g->data) : std::span<Scalar>{}});
  };
  add("wq", wq, grad ? &grad->wq : nullptr);
  add("wk", wk, grad ? &grad->wk : nullptr);
  add("wv", wv, grad ? &grad->wv : nullptr);
  add("wo", wo, grad ? &grad->wo : nullptr);
  add("rel_w", rel_w, grad ? &grad->rel_w : nullptr);
  add("rel_h", rel_h, grad ? &grad->rel_h : nullptr);
}

Matrix flatten_spatial(const Tensor& x, std::size_t batch) {
  const Shape& s = x.shape();
  if (batch >= s.n) throw ShapeError("flatten_spatial: batch index out of range");
  Matrix m(s.h * s.w, s.c);
  std::copy_n(&x.at(batch, 0, 0, 0), s.h * s.w * s.c, m.data.begin());
  return m;
}

Tensor unflatten_spatial(const Matrix& m, std::size_t height, std::size_t width) {
  if (m.rows != height * width) {
    throw ShapeError("unflatten_spatial: " + std::to_string(m.rows) + " rows for " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  return Tensor(Shape{1, height, width, m.cols}, m.data);
}

RelativeLogits relative_logits(const Matrix& q, const Matrix& rel_w, const Matrix& rel_h,
                               std::size_t height, std::size_t width) {
  const std::size_t hw = height * width;
  if (q.rows != hw) throw ShapeError("relative_logits: query rows do not match H*W");
  if (rel_w.cols != q.cols || rel_h.cols != q.cols) {
    throw ShapeError("relative_logits: embedding depth does not match query depth");
  }
  const std::size_t cw = table_center(rel_w, width, "width");
  const std::size_t ch = table_center(rel_h, height, "height");
  const Matrix qw = matmul_nt(q, rel_w);
  const Matrix qh = matmul_nt(q, rel_h);
  RelativeLogits out{Matrix(hw, hw), Matrix(hw, hw)};
  for (std::size_t i = 0; i < hw; ++i) {
    const std::size_t iy = i / width, ix = i % width;
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t jy = j / width, jx = j % width;
      out.width.at(i, j) = qw.at(i, jx + cw - ix);
      out.height.at(i, j) = qh.at(i, jy + ch - iy);
    }
  }
  return out;
}

namespace {

// Row-softmaxed attention weights for one head.
Matrix head_weights(const Matrix& q, const Matrix& k, const RelativeLogits& rel) {
  Matrix logits = matmul_nt(q, k);
  if (rel.height.rows != logits.rows || rel.height.cols != logits.cols ||
      rel.width.rows != logits.rows || rel.width.cols != logits.cols) {
    throw ShapeError("attention_head: relative logit matrices must be HW x HW");
  }
  const Scalar inv = 1 / std::sqrt(static_cast<Scalar>(q.cols));
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    logits.data[i] = (logits.data[i] + rel.height.data[i] + rel.width.data[i]) * inv;
  }
  if (!all_finite(logits.data)) throw NumericError("attention_head: non-finite logits");
  return softmax_rows(logits);
}

}  // namespace

Matrix attention_head(const Matrix& x, const AttentionParams& p, std::size_t head,
                      const RelativeLogits& rel) {
  if (head >= p.dims.heads) throw ShapeError("attention_head: head index out of range");
  if (x.cols != p.dims.in_depth) throw ShapeError("attention_head: input depth does not match F_in");
  const Matrix q = p.head_query(x, head);
  const Matrix k = p.head_key(x, head);
  return matmul(head_weights(q, k, rel), p.head_value(x, head));
}

Matrix multi_head_attention(const Matrix& x, const AttentionParams& p) {
  const AttentionShape& d = p.dims;
  if (x.rows != d.height * d.width) throw ShapeError("multi_head_attention: rows do not match H*W");
  Matrix concat(x.rows, d.value_depth);
  for (std::size_t h = 0; h < d.heads; ++h) {
    const Matrix q = p.head_query(x, h);
    const RelativeLogits rel = relative_logits(q, p.head_rel_w(h), p.head_rel_h(h), d.height, d.width);
    add_column_block(concat, attention_head(x, p, h, rel), h * d.value_depth_per_head());
  }
  return matmul(concat, p.wo);
}

namespace {

void check_augmented(const Shape& in, const ConvWeights& conv, const AttentionParams& p) {
  const AttentionShape& d = p.dims;
  if (d.value_depth == 0) throw ConfigError("attention-augmented conv: d_v must be positive");
  if (conv.out_channels() + d.value_depth != d.out_depth) {
    throw ConfigError("attention-augmented conv: conv channels " + std::to_string(conv.out_channels()) +
                      " + d_v " + std::to_string(d.value_depth) + " != F_out " +
                      std::to_string(d.out_depth));
  }
  if (conv.in_channels() != d.in_depth) {
    throw ShapeError("attention-augmented conv: conv and attention disagree on F_in");
  }
  if (in.c != d.in_depth || in.h != d.height || in.w != d.width) {
    throw ShapeError("attention-augmented conv: input " + in.str() + " does not match attention dims");
  }
}

}  // namespace

Tensor attention_augmented_conv(const Tensor& x, const ConvWeights& conv_w, const AttentionParams& p) {
  check_augmented(x.shape(), conv_w, p);
  const Shape& s = x.shape();
  Tensor attn(Shape{s.n, s.h, s.w, p.dims.value_depth});
  for (std::size_t n = 0; n < s.n; ++n) {
    const Matrix o = multi_head_attention(flatten_spatial(x, n), p);
    std::copy(o.data.begin(), o.data.end(), &attn.at(n, 0, 0, 0));
  }
  const Tensor parts[] = {conv2d(x, conv_w), std::move(attn)};
  return concat_channels(parts);
}

MultiHeadAttention::MultiHeadAttention(AttentionParams params)
    : p_(std::move(params)), g_(p_.dims) {}

Tensor MultiHeadAttention::forward(const Tensor& x, Mode mode) {
  const AttentionShape& d = p_.dims;
  const Shape& s = x.shape();
  if (s.c != d.in_depth || s.h != d.height || s.w != d.width) {
    throw ShapeError("attention: input " + s.str() + " does not match configured " +
                     std::to_string(d.height) + "x" + std::to_string(d.width) + "x" +
                     std::to_string(d.in_depth));
  }
  if (mode == Mode::train) cache_.assign(s.n, {});
  Tensor y(Shape{s.n, s.h, s.w, d.value_depth});
  for (std::size_t n = 0; n < s.n; ++n) {
    Matrix xm = flatten_spatial(x, n);
    Matrix concat(xm.rows, d.value_depth);
    std::vector<HeadCache> heads;
    for (std::size_t h = 0; h < d.heads; ++h) {
      HeadCache hc;
      hc.q = p_.head_query(xm, h);
      hc.k = p_.head_key(xm, h);
      hc.v = p_.head_value(xm, h);
      const RelativeLogits rel = relative_logits(hc.q, p_.head_rel_w(h), p_.head_rel_h(h), d.height, d.width);
      hc.weights = head_weights(hc.q, hc.k, rel);
      add_column_block(concat, matmul(hc.weights, hc.v), h * d.value_depth_per_head());
      if (mode == Mode::train) heads.push_back(std::move(hc));
    }
    const Matrix out = matmul(concat, p_.wo);
    std::copy(out.data.begin(), out.data.end(), &y.at(n, 0, 0, 0));
    if (mode == Mode::train) cache_[n] = ItemCache{std::move(xm), std::move(concat), std::move(heads)};
  }
  return y;
}

Tensor MultiHeadAttention::backward(const Tensor& dy) {
  const AttentionShape& d = p_.dims;
  const Shape& s = dy.shape();
  if (cache_.size() != s.n || s.c != d.value_depth) {
    throw ShapeError("attention backward: gradient does not match cached forward");
  }
  const std::size_t dkh = d.key_depth_per_head(), dvh = d.value_depth_per_head();
  const std::size_t rw = 2 * d.width - 1, rh = 2 * d.height - 1;
  const std::size_t hw = d.height * d.width;
  const Scalar inv = 1 / std::sqrt(static_cast<Scalar>(dkh));
  Tensor dx(Shape{s.n, s.h, s.w, d.in_depth});
  for (std::size_t n = 0; n < s.n; ++n) {
    const ItemCache& c = cache_[n];
    const Matrix dout = flatten_spatial(dy, n);
    add_into(g_.wo, matmul_tn(c.concat, dout));
    const Matrix dconcat = matmul_nt(dout, p_.wo);
    Matrix dxm(hw, d.in_depth);
    for (std::size_t h = 0; h < d.heads; ++h) {
      const HeadCache& hc = c.heads[h];
      const Matrix dO = column_block(dconcat, h * dvh, dvh);
      const Matrix dv = matmul_tn(hc.weights, dO);
      const Matrix da = matmul_nt(dO, hc.v);
      Matrix ds = softmax_rows_backward(hc.weights, da);
      for (Scalar& v : ds.data) v *= inv;
      Matrix dq = matmul(ds, hc.k);
      const Matrix dk = matmul_tn(ds, hc.q);

      Matrix dqw(hw, rw), dqh(hw, rh);
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t iy = i / d.width, ix = i % d.width;
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t jy = j / d.width, jx = j % d.width;
          const Scalar g = ds.at(i, j);
          dqw.at(i, jx + d.width - 1 - ix) += g;
          dqh.at(i, jy + d.height - 1 - iy) += g;
        }
      }
      add_into(dq, matmul(dqw, p_.head_rel_w(h)));
      add_into(dq, matmul(dqh, p_.head_rel_h(h)));
      add_row_block(g_.rel_w, matmul_tn(dqw, hc.q), h * rw);
      add_row_block(g_.rel_h, matmul_tn(dqh, hc.q), h * rh);

      add_column_block(g_.wq, matmul_tn(c.x, dq), h * dkh);
      add_column_block(g_.wk, matmul_tn(c.x, dk), h * dkh);
      add_column_block(g_.wv, matmul_tn(c.x, dv), h * dvh);
      add_into(dxm, matmul_nt(dq, column_block(p_.wq, h * dkh, dkh)));
      add_into(dxm, matmul_nt(dk, column_block(p_.wk, h * dkh, dkh)));
      add_into(dxm, matmul_nt(dv, column_block(p_.wv, h * dvh, dvh)));
    }
    std::copy(dxm.data.begin(), dxm.data.end(), &dx.at(n, 0, 0, 0));
  }
  return dx;
}

void MultiHeadAttention::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  p_.collect_params(prefix, &g_, out);
}

std::uint64_t MultiHeadAttention::macs() const {
  const AttentionShape& d = p_.dims;
  const std::uint64_t hw = d.height * d.width;
  const std::uint64_t projections = hw * d.in_depth * (2 * d.key_depth + d.value_depth);
  const std::uint64_t content = hw * hw * d.key_depth;
  const std::uint64_t relative = hw * ((2 * d.width - 1) + (2 * d.height - 1)) * d.key_depth;
  const std::uint64_t mix = hw * hw * d.value_depth;
  const std::uint64_t output = hw * d.value_depth * d.value_depth;
  return projections + content + relative + mix + output;
}

AugmentedConv::AugmentedConv(ConvWeights conv, AttentionParams attention)
    : conv_(std::move(conv)), mha_(std::move(attention)) {
  const AttentionShape& d = mha_.params().dims;
  check_augmented(Shape{1, d.height, d.width, d.in_depth}, conv_.weights(), mha_.params());
}

Tensor AugmentedConv::forward(const Tensor& x, Mode mode) {
  const Tensor parts[] = {conv_.forward(x, mode), mha_.forward(x, mode)};
  return concat_channels(parts);
}

Tensor AugmentedConv::backward(const Tensor& dy) {
  const std::size_t conv_ch = conv_.weights().out_channels();
  const std::size_t dv = mha_.params().dims.value_depth;
  Tensor dx = conv_.backward(slice_channels(dy, 0, conv_ch));
  dx += mha_.backward(slice_channels(dy, conv_ch, dv));
  return dx;
}

void AugmentedConv::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv_.collect_params(prefix + ".conv", out);
  mha_.collect_params(prefix + ".mha", out);
}

void AugmentedConv::init(Rng& rng) {
  conv_.init(rng);
  mha_.params().init(rng);
}

std::size_t AugmentedConv::param_count() const {
  return conv_.param_count() + mha_.params().param_count();
}

std::uint64_t AugmentedConv::macs(const Shape& in) const { return conv_.macs(in) + mha_.macs(); }

}  // namespace aapt
