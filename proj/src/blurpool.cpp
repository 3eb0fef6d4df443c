#include "aapt/blurpool.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace aapt {

std::vector<Scalar> make_box(std::size_t n) {
  if (n == 0) throw ConfigError("box length must be >= 1");
  return std::vector<Scalar>(n, 1);
}

BlurFilter make_blur_filter(std::size_t n) {
  const std::vector<Scalar> box = make_box(n);
  BlurFilter f;
  f.n = n;
  f.m = 2 * n - 1;
  f.taps.assign(f.m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) f.taps[i + j] += box[i] * box[j];
  }
  Scalar total = 0;
  for (Scalar t : f.taps) total += t;
  f.kernel.resize(f.m * f.m);
  for (std::size_t r = 0; r < f.m; ++r) {
    for (std::size_t c = 0; c < f.m; ++c) f.kernel[r * f.m + c] = f.taps[r] * f.taps[c] / (total * total);
  }
  return f;
}

std::size_t reflect_index(long long i, std::size_t extent) {
  if (extent == 1) return 0;
  const long long period = 2 * (static_cast<long long>(extent) - 1);
  long long j = i % period;
  if (j < 0) j += period;
  if (j >= static_cast<long long>(extent)) j = period - j;
  return static_cast<std::size_t>(j);
}

namespace {

Shape blur_output_shape(const Shape& in, std::size_t stride) {
  if (stride == 0) throw ShapeError("blur_pool: stride must be >= 1");
  return Shape{in.n, (in.h + stride - 1) / stride, (in.w + stride - 1) / stride, in.c};
}

}  // namespace

Tensor blur_pool(const Tensor& x, const BlurFilter& f, std::size_t stride) {
  const Shape& in = x.shape();
  const Shape out = blur_output_shape(in, stride);
  const long long half = static_cast<long long>(f.n) - 1;
  Tensor y(out);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        Scalar* yr = &y.at(n, oy, ox, 0);
        for (std::size_t ky = 0; ky < f.m; ++ky) {
          const std::size_t iy = reflect_index(static_cast<long long>(oy * stride + ky) - half, in.h);
          for (std::size_t kx = 0; kx < f.m; ++kx) {
            const std::size_t ix =
                reflect_index(static_cast<long long>(ox * stride + kx) - half, in.w);
            const Scalar wv = f.at(ky, kx);
            const Scalar* xr = &x.at(n, iy, ix, 0);
            for (std::size_t c = 0; c < in.c; ++c) yr[c] += wv * xr[c];
          }
        }
      }
    }
  }
  return y;
}

Tensor blur_pool_backward(const Shape& input, const Tensor& dy, const BlurFilter& f,
                          std::size_t stride) {
  const Shape out = blur_output_shape(input, stride);
  require_same_shape(dy.shape(), out, "blur_pool_backward");
  const long long half = static_cast<long long>(f.n) - 1;
  Tensor dx(input);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const Scalar* dr = &dy.at(n, oy, ox, 0);
        for (std::size_t ky = 0; ky < f.m; ++ky) {
          const std::size_t iy =
              reflect_index(static_cast<long long>(oy * stride + ky) - half, input.h);
          for (std::size_t kx = 0; kx < f.m; ++kx) {
            const std::size_t ix =
                reflect_index(static_cast<long long>(ox * stride + kx) - half, input.w);
            const Scalar wv = f.at(ky, kx);
            Scalar* g = &dx.at(n, iy, ix, 0);
            for (std::size_t c = 0; c < input.c; ++c) g[c] += wv * dr[c];
          }
        }
      }
    }
  }
  return dx;
}

namespace {

struct Window {
  std::size_t ylo, yhi, xlo, xhi;
};

Window pool_window(std::size_t oy, std::size_t ox, std::size_t k, std::size_t stride,
                   std::size_t before, const Shape& in) {
  const long long y0 = static_cast<long long>(oy * stride) - static_cast<long long>(before);
  const long long x0 = static_cast<long long>(ox * stride) - static_cast<long long>(before);
  return {static_cast<std::size_t>(std::max(0LL, y0)),
          static_cast<std::size_t>(std::min<long long>(in.h, y0 + static_cast<long long>(k))),
          static_cast<std::size_t>(std::max(0LL, x0)),
          static_cast<std::size_t>(std::min<long long>(in.w, x0 + static_cast<long long>(k)))};
}

Shape max_pool_shape(const Shape& in, std::size_t k, std::size_t stride, Padding padding) {
  if (k == 0 || k > in.h || k > in.w) {
    throw ShapeError("max_pool: window " + std::to_string(k) + " exceeds input " + in.str());
  }
  return Shape{in.n, output_extent(in.h, k, stride, padding), output_extent(in.w, k, stride, padding),
               in.c};
}

// Calls visit(out_index, in_index) with the argmax source for every output element.
template <typename Visit>
void for_each_argmax(const Tensor& x, const Shape& out, std::size_t k, std::size_t stride,
                     Padding padding, Visit&& visit) {
  const Shape& in = x.shape();
  const AxisPad pad = axis_pad(k, padding);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const Window win = pool_window(oy, ox, k, stride, pad.before, in);
        for (std::size_t c = 0; c < in.c; ++c) {
          std::size_t best = x.index(n, win.ylo, win.xlo, c);
          for (std::size_t iy = win.ylo; iy < win.yhi; ++iy) {
            for (std::size_t ix = win.xlo; ix < win.xhi; ++ix) {
              const std::size_t i = x.index(n, iy, ix, c);
              if (x[i] > x[best]) best = i;
            }
          }
          visit(((n * out.h + oy) * out.w + ox) * out.c + c, best);
        }
      }
    }
  }
}

}  // namespace

Tensor max_pool(const Tensor& x, std::size_t k, std::size_t stride, Padding padding) {
  const Shape out = max_pool_shape(x.shape(), k, stride, padding);
  Tensor y(out);
  for_each_argmax(x, out, k, stride, padding, [&](std::size_t o, std::size_t i) { y[o] = x[i]; });
  return y;
}

Tensor max_pool_backward(const Tensor& x, const Tensor& dy, std::size_t k, std::size_t stride,
                         Padding padding) {
  const Shape out = max_pool_shape(x.shape(), k, stride, padding);
  require_same_shape(dy.shape(), out, "max_pool_backward");
  Tensor dx(x.shape());
  for_each_argmax(x, out, k, stride, padding, [&](std::size_t o, std::size_t i) { dx[i] += dy[o]; });
  return dx;
}

Tensor shift(const Tensor& x, long long dh, long long dw, Boundary boundary) {
  const Shape& s = x.shape();
  Tensor y(s);
  const long long H = static_cast<long long>(s.h), W = static_cast<long long>(s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (long long h = 0; h < H; ++h) {
      for (long long w = 0; w < W; ++w) {
        long long sh = h - dh, sw = w - dw;
        const bool inside = sh >= 0 && sh < H && sw >= 0 && sw < W;
        if (!inside) {
          if (boundary == Boundary::zero) continue;
          sh = static_cast<long long>(reflect_index(sh, s.h));
          sw = static_cast<long long>(reflect_index(sw, s.w));
        }
        std::copy_n(&x.at(n, sh, sw, 0), s.c, &y.at(n, h, w, 0));
      }
    }
  }
  return y;
}

namespace {

// Inclusive range of output coordinates p whose input window [p*s - r, p*s + r]
// lies inside [lo, hi).
std::pair<long long, long long> interior_range(long long lo, long long hi, long long stride,
                                               long long radius) {
  const long long first = (lo + radius + stride - 1) / stride;
  const long long last = (hi - 1 - radius) >= 0 ? (hi - 1 - radius) / stride : -1;
  return {first, last};
}

}  // namespace

Scalar shift_equivariance_deviation(const FeatureExtractor& f, const Tensor& x, long long dh,
                                    long long dw) {
  if (f.stride == 0) throw ShapeError("extractor stride must be >= 1");
  const Tensor shifted_out = f.apply(shift(x, dh, dw, Boundary::zero));
  const Tensor out = f.apply(x);
  require_same_shape(shifted_out.shape(), out.shape(), "shift_equivariance_deviation");
  const Shape& in = x.shape();
  const Shape& os = out.shape();
  const long long s = static_cast<long long>(f.stride);
  const long long r = static_cast<long long>(f.radius);
  const long long H = static_cast<long long>(in.h), W = static_cast<long long>(in.w);
  const double qh = static_cast<double>(dh) / static_cast<double>(s);
  const double qw = static_cast<double>(dw) / static_cast<double>(s);

  // Shifted output at p reads real input rows [max(0, dh), min(H, H + dh)); the
  // reference output is sampled at p - qh, spanning floor/ceil neighbours.
  auto [a0, a1] = interior_range(std::max(0LL, dh), std::min(H, H + dh), s, r);
  auto [b0, b1] = interior_range(0, H, s, r);
  auto [c0, c1] = interior_range(std::max(0LL, dw), std::min(W, W + dw), s, r);
  auto [d0, d1] = interior_range(0, W, s, r);
  const long long row_lo = std::max<long long>(a0, static_cast<long long>(std::ceil(b0 + qh)));
  const long long row_hi = std::min<long long>({a1, static_cast<long long>(std::floor(b1 + qh)),
                                                static_cast<long long>(os.h) - 1});
  const long long col_lo = std::max<long long>(c0, static_cast<long long>(std::ceil(d0 + qw)));
  const long long col_hi = std::min<long long>({c1, static_cast<long long>(std::floor(d1 + qw)),
                                                static_cast<long long>(os.w) - 1});
  if (row_lo > row_hi || col_lo > col_hi) {
    throw ShapeError("shift (" + std::to_string(dh) + ", " + std::to_string(dw) +
                     ") leaves no interior region for input " + in.str());
  }

  auto sample = [&](std::size_t n, double py, double px, std::size_t c) -> Scalar {
    const long long y0 = static_cast<long long>(std::floor(py));
    const long long x0 = static_cast<long long>(std::floor(px));
    const double ty = py - static_cast<double>(y0);
    const double tx = px - static_cast<double>(x0);
    double v = (1 - ty) * (1 - tx) * out.at(n, y0, x0, c);
    if (tx > 0) v += (1 - ty) * tx * out.at(n, y0, x0 + 1, c);
    if (ty > 0) v += ty * (1 - tx) * out.at(n, y0 + 1, x0, c);
    if (ty > 0 && tx > 0) v += ty * tx * out.at(n, y0 + 1, x0 + 1, c);
    return static_cast<Scalar>(v);
  };

  double diff = 0, ref = 0;
  for (std::size_t n = 0; n < os.n; ++n) {
    for (long long p = row_lo; p <= row_hi; ++p) {
      for (long long q = col_lo; q <= col_hi; ++q) {
        for (std::size_t c = 0; c < os.c; ++c) {
          const double b = sample(n, static_cast<double>(p) - qh, static_cast<double>(q) - qw, c);
          const double a = shifted_out.at(n, p, q, c);
          diff += (a - b) * (a - b);
          ref += b * b;
        }
      }
    }
  }
  return static_cast<Scalar>(ref > 0 ? std::sqrt(diff / ref) : std::sqrt(diff));
}

FeatureExtractor pooling_extractor(Pooling pooling, std::size_t blur_n) {
  FeatureExtractor f;
  f.stride = 2;
  f.radius = std::max<std::size_t>(2, blur_n);
  switch (pooling) {
    case Pooling::blur: {
      const BlurFilter filter = make_blur_filter(blur_n);
      f.apply = [filter](const Tensor& x) { return blur_pool(x, filter, 2); };
      break;
    }
    case Pooling::average:
      f.apply = [](const Tensor& x) { return avg_pool(x, 2, 2); };
      break;
    case Pooling::max:
      f.apply = [](const Tensor& x) { return max_pool(x, 2, 2); };
      break;
  }
  return f;
}

FeatureExtractor conv_pooling_extractor(ConvWeights conv, Pooling pooling, std::size_t blur_n) {
  FeatureExtractor f = pooling_extractor(pooling, blur_n);
  f.radius += conv.kernel_size() / 2;
  f.apply = [conv = std::move(conv), pool = f.apply](const Tensor& x) { return pool(relu(conv2d(x, conv))); };
  return f;
}

}  // namespace aapt
