#include "aapt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace aapt {

namespace {

std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

// Input coordinate for output position o and kernel tap t, or -1 if in padding.
inline long long source_index(std::size_t o, std::size_t t, std::size_t stride, std::size_t before,
                              std::size_t extent) {
  const long long i = static_cast<long long>(o * stride + t) - static_cast<long long>(before);
  return (i < 0 || i >= static_cast<long long>(extent)) ? -1 : i;
}

void check_stride(std::size_t stride) {
  if (stride == 0) throw ShapeError("stride must be >= 1");
}

Shape conv_output_shape(const Shape& in, std::size_t k, std::size_t stride, Padding padding,
                        std::size_t c_out) {
  check_stride(stride);
  return Shape{in.n, output_extent(in.h, k, stride, padding), output_extent(in.w, k, stride, padding),
               c_out};
}

}  // namespace

AxisPad axis_pad(std::size_t kernel, Padding padding) {
  if (padding == Padding::valid || kernel == 0) return {};
  const std::size_t total = kernel - 1;
  return {total / 2, total - total / 2};
}

std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  check_stride(stride);
  const AxisPad p = axis_pad(kernel, padding);
  const std::size_t padded = in + p.before + p.after;
  if (kernel == 0 || padded < kernel) {
    throw ShapeError("window " + std::to_string(kernel) + " exceeds input extent " +
                     std::to_string(in));
  }
  return (padded - kernel) / stride + 1;
}

ConvWeights make_conv_weights(std::size_t k, std::size_t c_in, std::size_t c_out, bool bias) {
  ConvWeights w{Tensor(Shape{k, k, c_in, c_out}), std::nullopt};
  if (bias) w.bias = Tensor(Shape{1, 1, 1, c_out});
  return w;
}

ConvWeights make_depthwise_weights(std::size_t k, std::size_t channels, bool bias) {
  ConvWeights w{Tensor(Shape{k, k, channels, 1}), std::nullopt};
  if (bias) w.bias = Tensor(Shape{1, 1, 1, channels});
  return w;
}

ConvWeights zeros_like(const ConvWeights& w) {
  ConvWeights z{Tensor(w.kernel.shape()), std::nullopt};
  if (w.bias) z.bias = Tensor(w.bias->shape());
  return z;
}

Tensor conv2d(const Tensor& x, const ConvWeights& w, std::size_t stride, Padding padding) {
  const Shape& xs = x.shape();
  const Shape& ks = w.kernel.shape();
  if (ks.n != ks.h) throw ShapeError("conv2d: kernel must be square");
  if (xs.c != ks.w) throw ShapeError("conv2d: input channels " + dims(xs.c, ks.w));
  const std::size_t k = ks.n, cin = ks.w, cout = ks.c;
  if (w.bias && w.bias->size() != cout) throw ShapeError("conv2d: bias length " + dims(w.bias->size(), cout));
  const Shape ys = conv_output_shape(xs, k, stride, padding, cout);
  const AxisPad pad = axis_pad(k, padding);
  Tensor y(ys);
  const Scalar* kd = w.kernel.data();
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t oy = 0; oy < ys.h; ++oy) {
      for (std::size_t ox = 0; ox < ys.w; ++ox) {
        Scalar* yr = &y.at(n, oy, ox, 0);
        if (w.bias) std::copy_n(w.bias->data(), cout, yr);
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long long iy = source_index(oy, ky, stride, pad.before, xs.h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long long ix = source_index(ox, kx, stride, pad.before, xs.w);
            if (ix < 0) continue;
            const Scalar* xr = &x.at(n, iy, ix, 0);
            const Scalar* kr = kd + (ky * k + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const Scalar xv = xr[ci];
              const Scalar* wr = kr + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) yr[co] += xv * wr[co];
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy,
                          std::size_t stride, Padding padding) {
  const Shape& xs = x.shape();
  const Shape& ks = w.kernel.shape();
  const std::size_t k = ks.n, cin = ks.w, cout = ks.c;
  require_same_shape(dy.shape(), conv_output_shape(xs, k, stride, padding, cout), "conv2d_backward");
  const AxisPad pad = axis_pad(k, padding);
  ConvGrads g{Tensor(xs), zeros_like(w)};
  const Scalar* kd = w.kernel.data();
  Scalar* gk = g.dw.kernel.data();
  const Shape& ys = dy.shape();
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t oy = 0; oy < ys.h; ++oy) {
      for (std::size_t ox = 0; ox < ys.w; ++ox) {
        const Scalar* dr = &dy.at(n, oy, ox, 0);
        if (g.dw.bias) {
          Scalar* gb = g.dw.bias->data();
          for (std::size_t co = 0; co < cout; ++co) gb[co] += dr[co];
        }
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long long iy = source_index(oy, ky, stride, pad.before, xs.h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long long ix = source_index(ox, kx, stride, pad.before, xs.w);
            if (ix < 0) continue;
            const Scalar* xr = &x.at(n, iy, ix, 0);
            Scalar* dxr = &g.dx.at(n, iy, ix, 0);
            const std::size_t off = (ky * k + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const Scalar* wr = kd + off + ci * cout;
              Scalar* gr = gk + off + ci * cout;
              const Scalar xv = xr[ci];
              Scalar acc = 0;
              for (std::size_t co = 0; co < cout; ++co) {
                acc += dr[co] * wr[co];
                gr[co] += xv * dr[co];
              }
              dxr[ci] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor depthwise_conv2d(const Tensor& x, const ConvWeights& w, std::size_t stride, Padding padding) {
  const Shape& xs = x.shape();
  const Shape& ks = w.kernel.shape();
  if (ks.n != ks.h || ks.c != 1) throw ShapeError("depthwise_conv2d: kernel must be (k, k, C, 1)");
  if (xs.c != ks.w) throw ShapeError("depthwise_conv2d: channels " + dims(xs.c, ks.w));
  const std::size_t k = ks.n, ch = ks.w;
  if (w.bias && w.bias->size() != ch) throw ShapeError("depthwise_conv2d: bias length " + dims(w.bias->size(), ch));
  const Shape ys = conv_output_shape(xs, k, stride, padding, ch);
  const AxisPad pad = axis_pad(k, padding);
  Tensor y(ys);
  const Scalar* kd = w.kernel.data();
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t oy = 0; oy < ys.h; ++oy) {
      for (std::size_t ox = 0; ox < ys.w; ++ox) {
        Scalar* yr = &y.at(n, oy, ox, 0);
        if (w.bias) std::copy_n(w.bias->data(), ch, yr);
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long long iy = source_index(oy, ky, stride, pad.before, xs.h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long long ix = source_index(ox, kx, stride, pad.before, xs.w);
            if (ix < 0) continue;
            const Scalar* xr = &x.at(n, iy, ix, 0);
            const Scalar* kr = kd + (ky * k + kx) * ch;
            for (std::size_t c = 0; c < ch; ++c) yr[c] += xr[c] * kr[c];
          }
        }
      }
    }
  }
  return y;
}

ConvGrads depthwise_conv2d_backward(const Tensor& x, const ConvWeights& w, const Tensor& dy,
                                    std::size_t stride, Padding padding) {
  const Shape& xs = x.shape();
  const std::size_t k = w.kernel.shape().n, ch = w.kernel.shape().w;
  require_same_shape(dy.shape(), conv_output_shape(xs, k, stride, padding, ch),
                     "depthwise_conv2d_backward");
  const AxisPad pad = axis_pad(k, padding);
  ConvGrads g{Tensor(xs), zeros_like(w)};
  const Scalar* kd = w.kernel.data();
  Scalar* gk = g.dw.kernel.data();
  const Shape& ys = dy.shape();
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t oy = 0; oy < ys.h; ++oy) {
      for (std::size_t ox = 0; ox < ys.w; ++ox) {
        const Scalar* dr = &dy.at(n, oy, ox, 0);
        if (g.dw.bias) {
          Scalar* gb = g.dw.bias->data();
          for (std::size_t c = 0; c < ch; ++c) gb[c] += dr[c];
        }
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long long iy = source_index(oy, ky, stride, pad.before, xs.h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long long ix = source_index(ox, kx, stride, pad.before, xs.w);
            if (ix < 0) continue;
            const Scalar* xr = &x.at(n, iy, ix, 0);
            Scalar* dxr = &g.dx.at(n, iy, ix, 0);
            const std::size_t off = (ky * k + kx) * ch;
            for (std::size_t c = 0; c < ch; ++c) {
              dxr[c] += dr[c] * kd[off + c];
              gk[off + c] += dr[c] * xr[c];
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor depthwise_separable_conv(const Tensor& x, const ConvWeights& dw, const ConvWeights& pw) {
  if (pw.kernel_size() != 1) throw ShapeError("depthwise_separable_conv: pointwise kernel must be 1x1");
  if (dw.in_channels() != pw.in_channels()) {
    throw ShapeError("depthwise_separable_conv: depthwise output channels " +
                     dims(dw.in_channels(), pw.in_channels()));
  }
  return conv2d(depthwise_conv2d(x, dw), pw);
}

double separable_reduction_factor(std::size_t kernel, std::size_t out_depth,
                                  std::size_t denominator_kernel) {
  const double kf2 = static_cast<double>(kernel * kernel);
  const double d2 = static_cast<double>(denominator_kernel * denominator_kernel);
  return kf2 * static_cast<double>(out_depth) / (d2 + static_cast<double>(out_depth));
}

Scalar softplus(Scalar x) {
  if (x > Scalar(20)) return x;
  if (x < Scalar(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

// tanh(softplus(x)) = n / (n + 2) with n = e^x (e^x + 2).
Scalar mish(Scalar x) {
  if (x > Scalar(20)) return x;
  const Scalar e = std::exp(x);
  const Scalar n = e * (e + 2);
  return x * n / (n + 2);
}

Scalar mish_derivative(Scalar x) {
  if (x > Scalar(20)) return 1;
  const Scalar e = std::exp(x);
  const Scalar n = e * (e + 2);
  const Scalar t = n / (n + 2);
  const Scalar sech2 = 2 / (n + 2) * (1 + t);
  return t + x * sech2 * (e / (1 + e));
}

Tensor mish(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = mish(x[i]);
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : Scalar(0);
  return y;
}

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::mish ? mish(x) : relu(x);
}

Tensor activate_backward(const Tensor& x, const Tensor& dy, Activation act) {
  require_same_shape(x.shape(), dy.shape(), "activate_backward");
  Tensor dx(x.shape());
  if (act == Activation::mish) {
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * mish_derivative(x[i]);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0 ? dy[i] : Scalar(0);
  }
  return dx;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix p(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const Scalar* in = m.row(r);
    Scalar* out = p.row(r);
    const Scalar mx = *std::max_element(in, in + m.cols);
    Scalar total = 0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      total += out[c];
    }
    for (std::size_t c = 0; c < m.cols; ++c) out[c] /= total;
  }
  return p;
}

Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
  Matrix dl(p.rows, p.cols);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const Scalar* pr = p.row(r);
    const Scalar* gr = dp.row(r);
    Scalar inner = 0;
    for (std::size_t c = 0; c < p.cols; ++c) inner += pr[c] * gr[c];
    Scalar* out = dl.row(r);
    for (std::size_t c = 0; c < p.cols; ++c) out[c] = pr[c] * (gr[c] - inner);
  }
  return dl;
}

BatchNormParams::BatchNormParams(std::size_t channels)
    : gamma(Shape{1, 1, 1, channels}, 1),
      beta(Shape{1, 1, 1, channels}, 0),
      running_mean(Shape{1, 1, 1, channels}, 0),
      running_var(Shape{1, 1, 1, channels}, 1) {}

Tensor batch_norm(const Tensor& x, BatchNormParams& p, Mode mode, BatchNormCache* cache) {
  const Shape& s = x.shape();
  const std::size_t ch = s.c;
  if (p.gamma.size() != ch || p.beta.size() != ch) {
    throw ShapeError("batch_norm: parameter length " + dims(p.gamma.size(), ch));
  }
  const std::size_t count = s.n * s.h * s.w;
  std::vector<Scalar> mean(ch, 0), var(ch, 0);
  if (mode == Mode::train) {
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t c = 0; c < ch; ++c) mean[c] += x[i * ch + c];
    }
    for (std::size_t c = 0; c < ch; ++c) mean[c] /= static_cast<Scalar>(count);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t c = 0; c < ch; ++c) {
        const Scalar d = x[i * ch + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < ch; ++c) {
      var[c] /= static_cast<Scalar>(count);
      p.running_mean[c] = p.momentum * p.running_mean[c] + (1 - p.momentum) * mean[c];
      p.running_var[c] = p.momentum * p.running_var[c] + (1 - p.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = p.running_mean[c];
      var[c] = p.running_var[c];
    }
  }
  std::vector<Scalar> inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1 / std::sqrt(var[c] + p.epsilon);

  Tensor y(s);
  Tensor normalized(s);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const Scalar xh = (x[i * ch + c] - mean[c]) * inv_std[c];
      normalized[i * ch + c] = xh;
      y[i * ch + c] = p.gamma[c] * xh + p.beta[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor& dy, const BatchNormParams& p,
                                   const BatchNormCache& cache) {
  const Shape& s = dy.shape();
  require_same_shape(s, cache.normalized.shape(), "batch_norm_backward");
  const std::size_t ch = s.c;
  const std::size_t count = s.n * s.h * s.w;
  BatchNormGrads g{Tensor(s), Tensor(p.gamma.shape()), Tensor(p.beta.shape())};
  std::vector<Scalar> sum_dxh(ch, 0), sum_dxh_xh(ch, 0);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const Scalar d = dy[i * ch + c];
      const Scalar xh = cache.normalized[i * ch + c];
      g.dbeta[c] += d;
      g.dgamma[c] += d * xh;
      const Scalar dxh = d * p.gamma[c];
      sum_dxh[c] += dxh;
      sum_dxh_xh[c] += dxh * xh;
    }
  }
  const Scalar m = static_cast<Scalar>(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const Scalar dxh = dy[i * ch + c] * p.gamma[c];
      const Scalar xh = cache.normalized[i * ch + c];
      g.dx[i * ch + c] = cache.inv_std[c] / m * (m * dxh - sum_dxh[c] - xh * sum_dxh_xh[c]);
    }
  }
  return g;
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs.front().shape();
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: spatial mismatch " + s.str() + " vs " + s0.str());
    }
    total += s.c;
  }
  Tensor y(Shape{s0.n, s0.h, s0.w, total});
  const std::size_t pixels = s0.n * s0.h * s0.w;
  for (std::size_t i = 0; i < pixels; ++i) {
    Scalar* out = y.data() + i * total;
    for (const Tensor& t : xs) {
      const std::size_t c = t.shape().c;
      out = std::copy_n(t.data() + i * c, c, out);
    }
  }
  return y;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (count == 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(s.c) + " channels");
  }
  Tensor y(Shape{s.n, s.h, s.w, count});
  const std::size_t pixels = s.n * s.h * s.w;
  for (std::size_t i = 0; i < pixels; ++i) {
    std::copy_n(x.data() + i * s.c + begin, count, y.data() + i * count);
  }
  return y;
}

namespace {

template <typename Visit>
void for_each_window(const Shape& in, const Shape& out, std::size_t k, std::size_t stride,
                     Padding padding, Visit&& visit) {
  const AxisPad pad = axis_pad(k, padding);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const long long y0 = static_cast<long long>(oy * stride) - static_cast<long long>(pad.before);
        const long long x0 = static_cast<long long>(ox * stride) - static_cast<long long>(pad.before);
        const std::size_t ylo = static_cast<std::size_t>(std::max(0LL, y0));
        const std::size_t xlo = static_cast<std::size_t>(std::max(0LL, x0));
        const std::size_t yhi = static_cast<std::size_t>(std::min<long long>(in.h, y0 + static_cast<long long>(k)));
        const std::size_t xhi = static_cast<std::size_t>(std::min<long long>(in.w, x0 + static_cast<long long>(k)));
        visit(n, oy, ox, ylo, yhi, xlo, xhi);
      }
    }
  }
}

Shape pool_output_shape(const Shape& in, std::size_t k, std::size_t stride, Padding padding) {
  if (k > in.h || k > in.w) {
    throw ShapeError("pooling window " + std::to_string(k) + " exceeds input " + in.str());
  }
  return conv_output_shape(in, k, stride, padding, in.c);
}

}  // namespace

Tensor avg_pool(const Tensor& x, std::size_t k, std::size_t stride, Padding padding) {
  const Shape& in = x.shape();
  const Shape out = pool_output_shape(in, k, stride, padding);
  Tensor y(out);
  for_each_window(in, out, k, stride, padding,
                  [&](std::size_t n, std::size_t oy, std::size_t ox, std::size_t ylo,
                      std::size_t yhi, std::size_t xlo, std::size_t xhi) {
                    Scalar* yr = &y.at(n, oy, ox, 0);
                    for (std::size_t iy = ylo; iy < yhi; ++iy) {
                      for (std::size_t ix = xlo; ix < xhi; ++ix) {
                        const Scalar* xr = &x.at(n, iy, ix, 0);
                        for (std::size_t c = 0; c < in.c; ++c) yr[c] += xr[c];
                      }
                    }
                    const Scalar count = static_cast<Scalar>((yhi - ylo) * (xhi - xlo));
                    for (std::size_t c = 0; c < in.c; ++c) yr[c] /= count;
                  });
  return y;
}

Tensor avg_pool_backward(const Shape& input, const Tensor& dy, std::size_t k, std::size_t stride,
                         Padding padding) {
  const Shape out = pool_output_shape(input, k, stride, padding);
  require_same_shape(dy.shape(), out, "avg_pool_backward");
  Tensor dx(input);
  for_each_window(input, out, k, stride, padding,
                  [&](std::size_t n, std::size_t oy, std::size_t ox, std::size_t ylo,
                      std::size_t yhi, std::size_t xlo, std::size_t xhi) {
                    const Scalar* dr = &dy.at(n, oy, ox, 0);
                    const Scalar count = static_cast<Scalar>((yhi - ylo) * (xhi - xlo));
                    for (std::size_t iy = ylo; iy < yhi; ++iy) {
                      for (std::size_t ix = xlo; ix < xhi; ++ix) {
                        Scalar* g = &dx.at(n, iy, ix, 0);
                        for (std::size_t c = 0; c < input.c; ++c) g[c] += dr[c] / count;
                      }
                    }
                  });
  return dx;
}

Scalar sum(const Tensor& x) {
  Scalar s = 0;
  for (Scalar v : x.values()) s += v;
  return s;
}

Scalar dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  Scalar s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor scale(const Tensor& x, Scalar s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return out;
}

bool all_finite(std::span<const Scalar> v) {
  return std::all_of(v.begin(), v.end(), [](Scalar s) { return std::isfinite(s); });
}

}  // namespace aapt
