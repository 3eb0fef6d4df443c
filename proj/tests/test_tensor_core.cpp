#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aapt/gradcheck.hpp"
#include "aapt/ops.hpp"
#include "aapt/serialize.hpp"
#include "oracles.hpp"

using namespace aapt;

namespace {

ConvWeights random_conv(std::size_t k, std::size_t cin, std::size_t cout, bool bias, Rng& rng) {
  ConvWeights w = make_conv_weights(k, cin, cout, bias);
  for (auto& v : w.kernel.values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  if (w.bias) for (auto& v : w.bias->values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return w;
}

ConvWeights random_depthwise(std::size_t k, std::size_t c, bool bias, Rng& rng) {
  ConvWeights w = make_depthwise_weights(k, c, bias);
  for (auto& v : w.kernel.values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  if (w.bias) for (auto& v : w.bias->values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return w;
}

std::vector<GradTarget> targets(Tensor& x, const Tensor& dx, ConvWeights& w, const ConvWeights& dw) {
  std::vector<GradTarget> t{{"x", x.values(), dx.values()}, {"kernel", w.kernel.values(), dw.kernel.values()}};
  if (w.bias) t.push_back({"bias", w.bias->values(), dw.bias->values()});
  return t;
}

}  // namespace

TEST(Tensor, ElementCountAndLayout) {
  Tensor t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.index(1, 2, 3, 4), 119u);
  EXPECT_EQ(t.index(0, 0, 1, 0), 5u);
}

TEST(Tensor, RejectsZeroDimension) {
  EXPECT_THROW(Tensor(Shape{1, 0, 2, 2}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 2}, std::vector<Scalar>{1}), ShapeError);
}

TEST(Conv2d, PointwiseScaling) {
  const Tensor x(Shape{1, 3, 3, 1}, 1);
  ConvWeights w = make_conv_weights(1, 1, 1, false);
  w.kernel[0] = 2;
  const Tensor y = conv2d(x, w);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3, 1}));
  for (Scalar v : y.values()) EXPECT_EQ(v, 2);
}

TEST(Conv2d, IdentityKernelIsExactIdentity) {
  Rng rng(1);
  const Tensor x = oracle::random_tensor(Shape{1, 4, 4, 1}, rng);
  ConvWeights w = make_conv_weights(3, 1, 1, false);
  w.kernel.at(1, 1, 0, 0) = 1;
  EXPECT_EQ(conv2d(x, w), x);
}

TEST(Conv2d, MatchesBruteForce) {
  Rng rng(2);
  const Tensor x = oracle::random_tensor(Shape{1, 5, 5, 3}, rng);
  const ConvWeights w = random_conv(3, 3, 4, true, rng);
  EXPECT_LT(oracle::max_rel_diff(conv2d(x, w), oracle::conv(w, x)), 1e-6);
  EXPECT_LT(oracle::max_rel_diff(conv2d(x, w, 2), oracle::conv(w, x, 2)), 1e-6);
  EXPECT_LT(oracle::max_rel_diff(conv2d(x, w, 1, Padding::valid), oracle::conv(w, x, 1, false)), 1e-6);
  const Tensor x6 = oracle::random_tensor(Shape{2, 6, 7, 3}, rng);
  EXPECT_LT(oracle::max_rel_diff(conv2d(x6, w, 2), oracle::conv(w, x6, 2)), 1e-6);
}

TEST(Conv2d, SamePaddingPutsOddPixelBottomRight) {
  EXPECT_EQ(axis_pad(3, Padding::same).before, 1u);
  EXPECT_EQ(axis_pad(3, Padding::same).after, 1u);
  EXPECT_EQ(axis_pad(2, Padding::same).before, 0u);
  EXPECT_EQ(axis_pad(2, Padding::same).after, 1u);
  EXPECT_EQ(output_extent(7, 3, 2, Padding::same), 4u);
  EXPECT_EQ(output_extent(7, 3, 2, Padding::valid), 3u);
}

TEST(Conv2d, ChannelMismatchIsDescriptive) {
  const Tensor x(Shape{1, 3, 3, 2});
  const ConvWeights w = make_conv_weights(3, 3, 1, false);
  try {
    conv2d(x, w);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
}

TEST(Depthwise, MatchesBlockDiagonalConv) {
  Rng rng(3);
  const Tensor x = oracle::random_tensor(Shape{2, 5, 6, 4}, rng);
  const ConvWeights w = random_depthwise(3, 4, true, rng);
  EXPECT_LT(oracle::max_rel_diff(depthwise_conv2d(x, w), oracle::depthwise(w, x)), 1e-6);
  EXPECT_LT(oracle::max_rel_diff(depthwise_conv2d(x, w, 2), oracle::depthwise(w, x, 2)), 1e-6);
}

TEST(Separable, ReductionFactor) {
  EXPECT_NEAR(separable_reduction_factor(3, 64), 576.0 / 73.0, 1e-12);
  EXPECT_NEAR(separable_reduction_factor(3, 40), 360.0 / 49.0, 1e-12);
  EXPECT_NEAR(separable_reduction_factor(3, 64, 10), 576.0 / 164.0, 1e-12);
}

TEST(Separable, MultiplyCountRatioMatchesFactor) {
  const std::size_t k = 3, cin = 64, cout = 64, hw = 14 * 14;
  const double standard = double(hw) * k * k * cin * cout;
  const double separable = double(hw) * k * k * cin + double(hw) * cin * cout;
  EXPECT_NEAR(standard / separable, separable_reduction_factor(k, cout), 1e-12);
}

TEST(Separable, ComposedIdentities) {
  Rng rng(4);
  const Tensor x = oracle::random_tensor(Shape{1, 4, 4, 3}, rng);
  ConvWeights dw = make_depthwise_weights(3, 3, false);
  for (std::size_t c = 0; c < 3; ++c) dw.kernel.at(1, 1, c, 0) = 1;
  ConvWeights pw = make_conv_weights(1, 3, 3, false);
  for (std::size_t c = 0; c < 3; ++c) pw.kernel.at(0, 0, c, c) = 1;
  EXPECT_EQ(depthwise_separable_conv(x, dw, pw), x);
}

TEST(Separable, EqualsExpandedDenseKernel) {
  Rng rng(5);
  const Tensor x = oracle::random_tensor(Shape{1, 6, 6, 4}, rng);
  const ConvWeights dw = random_depthwise(3, 4, false, rng);
  const ConvWeights pw = random_conv(1, 4, 5, false, rng);
  Tensor dense(Shape{3, 3, 4, 5});
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t o = 0; o < 5; ++o) dense.at(a, b, c, o) = dw.kernel.at(a, b, c, 0) * pw.kernel.at(0, 0, c, o);
  EXPECT_LT(oracle::max_rel_diff(depthwise_separable_conv(x, dw, pw), oracle::conv(x, dense, nullptr, 1, true)), 1e-6);
}

TEST(Separable, ChannelMismatchRejected) {
  const Tensor x(Shape{1, 4, 4, 3});
  EXPECT_THROW(depthwise_separable_conv(x, make_depthwise_weights(3, 3, false), make_conv_weights(1, 2, 2, false)),
               ShapeError);
}

TEST(Mish, Examples) {
  EXPECT_EQ(mish(Scalar(0)), 0);
  EXPECT_NEAR(mish(Scalar(20)), 20, 1e-6);
  EXPECT_NEAR(mish(Scalar(1)), 0.8650983882673103461, 1e-12);
  EXPECT_NEAR(mish(Scalar(0.5)), 0.3752452113048951048, 1e-12);
  EXPECT_NEAR(mish(Scalar(-1)), -0.3034014613741089181, 1e-12);
  EXPECT_NEAR(mish(Scalar(3)), 2.986535004967957319, 1e-12);
  EXPECT_NEAR(mish(Scalar(-5)), -0.03357623773016170540, 1e-12);
}

TEST(Mish, StableForLargeMagnitudes) {
  for (double x : {-1000.0, -80.0, -21.0, 21.0, 80.0, 1000.0}) {
    const Scalar y = mish(static_cast<Scalar>(x));
    EXPECT_TRUE(std::isfinite(y)) << x;
    if (x > 0) EXPECT_NEAR(y, x, 1e-9 * x);
    else EXPECT_NEAR(y, 0, 1e-6);
  }
}

TEST(Mish, MonotoneForNonNegativeAndBoundedBelow) {
  Scalar prev = mish(Scalar(0));
  Scalar lowest = 0;
  for (int i = -20000; i <= 20000; ++i) {
    const Scalar x = static_cast<Scalar>(i) / 1000;
    const Scalar y = mish(x);
    lowest = std::min(lowest, y);
    if (i > 0) {
      EXPECT_GT(y, prev);
      prev = y;
    }
  }
  EXPECT_GE(lowest, -0.309);
  EXPECT_LT(lowest, -0.308);
}

TEST(Mish, DerivativeMatchesCentralDifference) {
  for (double x : {-3.0, -0.7, 0.0, 0.5, 2.0, 19.9, 20.1}) {
    const Scalar h = central_difference_step(static_cast<Scalar>(x));
    const Scalar fd = (mish(static_cast<Scalar>(x + h)) - mish(static_cast<Scalar>(x - h))) / (2 * h);
    EXPECT_NEAR(mish_derivative(static_cast<Scalar>(x)), fd, 1e-7) << x;
  }
}

TEST(Mish, TensorFormMatchesOracle) {
  Rng rng(6);
  const Tensor x = oracle::random_tensor(Shape{1, 3, 3, 4}, rng, -30, 30);
  EXPECT_LT(oracle::max_rel_diff(mish(x), oracle::mish(x)), 1e-12);
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu(Tensor(Shape{1, 1, 1, 1}, -3))[0], 0);
  EXPECT_EQ(relu(Tensor(Shape{1, 1, 1, 1}, 5))[0], 5);
  const Tensor y = relu(Tensor(Shape{1, 1, 1, 3}, std::vector<Scalar>{-1, 0, 2}));
  EXPECT_EQ(y, Tensor(Shape{1, 1, 1, 3}, std::vector<Scalar>({0, 0, 2})));
}

TEST(Softmax, Examples) {
  Matrix m(1, 2, 0);
  const Matrix p = softmax_rows(m);
  EXPECT_DOUBLE_EQ(p.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(0, 1), 0.5);
  Matrix big(1, 3, 1000);
  const Matrix q = softmax_rows(big);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(q.at(0, j), 1.0 / 3, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(7);
  Matrix m = oracle::random_matrix(4, 7, rng, 5);
  const Matrix p = softmax_rows(m);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) s += p.at(i, j);
    EXPECT_NEAR(s, 1, 1e-6);
    for (std::size_t j = 0; j < 7; ++j) m.at(i, j) += static_cast<Scalar>(3.25 * double(i + 1));
  }
  EXPECT_LT(oracle::max_rel_diff(softmax_rows(m), p), 1e-12);
}

TEST(BatchNorm, ConstantChannelGivesZero) {
  BatchNormParams p(2);
  const Tensor y = batch_norm(Tensor(Shape{2, 3, 3, 2}, 4.5), p, Mode::train);
  for (Scalar v : y.values()) EXPECT_EQ(v, 0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(8);
  BatchNormParams p(3);
  p.gamma.fill(0);
  p.beta = Tensor(p.beta.shape(), std::vector<Scalar>{0.5, -1, 2});
  const Tensor y = batch_norm(oracle::random_tensor(Shape{2, 2, 2, 3}, rng), p, Mode::train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], p.beta[i % 3]);
}

TEST(BatchNorm, TrainModeStatistics) {
  Rng rng(9);
  BatchNormParams p(2);
  p.gamma = Tensor(p.gamma.shape(), std::vector<Scalar>{2, 0.5});
  p.beta = Tensor(p.beta.shape(), std::vector<Scalar>{-1, 3});
  const Tensor x = oracle::random_tensor(Shape{4, 5, 5, 2}, rng, -3, 7);
  const Tensor y = batch_norm(x, p, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, xmean = 0;
    const std::size_t count = y.size() / 2;
    for (std::size_t i = c; i < y.size(); i += 2) mean += y[i], xmean += x[i];
    mean /= double(count);
    xmean /= double(count);
    for (std::size_t i = c; i < y.size(); i += 2) sq += (y[i] - mean) * (y[i] - mean);
    EXPECT_NEAR(mean, p.beta[c], 1e-4);
    EXPECT_NEAR(std::sqrt(sq / double(count)), p.gamma[c], 1e-4);
    EXPECT_NEAR(p.running_mean[c], 0.1 * xmean, 1e-12);
  }
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  BatchNormParams p(1);
  p.running_mean[0] = 2;
  p.running_var[0] = 4;
  p.gamma[0] = 3;
  p.beta[0] = 1;
  const Tensor y = batch_norm(Tensor(Shape{1, 1, 2, 1}, std::vector<Scalar>{2, 6}), p, Mode::infer);
  EXPECT_NEAR(y[0], 1, 1e-12);
  EXPECT_NEAR(y[1], 1 + 3 * 4 / std::sqrt(4 + 1e-5), 1e-12);
  EXPECT_EQ(p.running_mean[0], 2);
}

TEST(Concat, LayoutAndRoundTrip) {
  Rng rng(10);
  const Tensor a = oracle::random_tensor(Shape{1, 2, 2, 3}, rng);
  const Tensor b = oracle::random_tensor(Shape{1, 2, 2, 3}, rng);
  const Tensor c = oracle::random_tensor(Shape{1, 2, 2, 1}, rng);
  const Tensor one[] = {a};
  EXPECT_EQ(concat_channels(one), a);
  const Tensor parts[] = {a, b, c};
  const Tensor y = concat_channels(parts);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 7}));
  EXPECT_EQ(y.at(0, 1, 0, 2), a.at(0, 1, 0, 2));
  EXPECT_EQ(y.at(0, 1, 0, 3), b.at(0, 1, 0, 0));
  EXPECT_EQ(slice_channels(y, 0, 3), a);
  EXPECT_EQ(slice_channels(y, 3, 3), b);
  EXPECT_EQ(slice_channels(y, 6, 1), c);
  const Tensor bad[] = {a, Tensor(Shape{1, 3, 2, 1})};
  EXPECT_THROW(concat_channels(bad), ShapeError);
}

TEST(AvgPool, Examples) {
  const Tensor x(Shape{1, 2, 2, 1}, std::vector<Scalar>{1, 2, 3, 4});
  EXPECT_EQ(avg_pool(x, 2, 2)[0], 2.5);
  const Tensor c = avg_pool(Tensor(Shape{1, 5, 5, 2}, 1.75), 2, 2);
  for (Scalar v : c.values()) EXPECT_EQ(v, 1.75);
  EXPECT_THROW(avg_pool(x, 3, 1, Padding::valid), ShapeError);
}

TEST(AvgPool, MatchesBruteForce) {
  Rng rng(11);
  const Tensor x = oracle::random_tensor(Shape{1, 4, 4, 2}, rng);
  EXPECT_LT(oracle::max_rel_diff(avg_pool(x, 2, 2), oracle::avg_pool(x, 2, 2)), 1e-12);
  const Tensor odd = oracle::random_tensor(Shape{2, 5, 7, 2}, rng);
  EXPECT_LT(oracle::max_rel_diff(avg_pool(odd, 2, 2), oracle::avg_pool(odd, 2, 2)), 1e-12);
  EXPECT_LT(oracle::max_rel_diff(avg_pool(odd, 3, 1), oracle::avg_pool(odd, 3, 1)), 1e-12);
}

TEST(GradCheck, LinearFunction) {
  std::vector<Scalar> x{0.7};
  const std::vector<Scalar> g{3};
  const GradTarget t[] = {{"x", x, g}};
  const auto r = grad_check([&] { return 3 * x[0]; }, t);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_relative_error, 1e-9);
}

TEST(GradCheck, MishDerivative) {
  std::vector<Scalar> x{0.5};
  const std::vector<Scalar> g{mish_derivative(0.5)};
  const GradTarget t[] = {{"x", x, g}};
  const auto r = grad_check([&] { return mish(x[0]); }, t);
  EXPECT_LT(r.max_relative_error, 1e-7);
}

TEST(GradCheck, FlagsWrongGradientAndReportsIndex) {
  std::vector<Scalar> x{1, 2, 3};
  const std::vector<Scalar> g{2, 4.1, 6};
  const GradTarget t[] = {{"x", x, g}};
  const auto r = grad_check([&] { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; }, t);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_parameter_index, 1u);
  EXPECT_EQ(r.passed, r.max_relative_error < GradCheckOptions{}.tolerance);
}

TEST(GradCheck, NonFiniteGradientThrows) {
  std::vector<Scalar> x{1};
  const std::vector<Scalar> g{std::numeric_limits<Scalar>::quiet_NaN()};
  const GradTarget t[] = {{"x", x, g}};
  EXPECT_THROW(grad_check([&] { return x[0]; }, t), NumericError);
}

TEST(Backward, Conv2d) {
  Rng rng(12);
  for (std::size_t stride : {1u, 2u}) {
    Tensor x = oracle::random_tensor(Shape{2, 5, 4, 3}, rng);
    ConvWeights w = random_conv(3, 3, 2, true, rng);
    const Tensor r = oracle::random_tensor(conv2d(x, w, stride).shape(), rng);
    const ConvGrads g = conv2d_backward(x, w, r, stride);
    const auto t = targets(x, g.dx, w, g.dw);
    const auto rep = grad_check([&] { return dot(conv2d(x, w, stride), r); }, t);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error << " " << rep.worst_target;
  }
}

TEST(Backward, Depthwise) {
  Rng rng(13);
  for (std::size_t stride : {1u, 2u}) {
    Tensor x = oracle::random_tensor(Shape{2, 5, 5, 3}, rng);
    ConvWeights w = random_depthwise(3, 3, true, rng);
    const Tensor r = oracle::random_tensor(depthwise_conv2d(x, w, stride).shape(), rng);
    const ConvGrads g = depthwise_conv2d_backward(x, w, r, stride);
    const auto t = targets(x, g.dx, w, g.dw);
    const auto rep = grad_check([&] { return dot(depthwise_conv2d(x, w, stride), r); }, t);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error << " " << rep.worst_target;
  }
}

TEST(Backward, BatchNorm) {
  Rng rng(14);
  Tensor x = oracle::random_tensor(Shape{3, 2, 2, 2}, rng);
  BatchNormParams p(2);
  for (auto& v : p.gamma.values()) v = static_cast<Scalar>(rng.uniform(0.5, 2));
  for (auto& v : p.beta.values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  const Tensor r = oracle::random_tensor(x.shape(), rng);
  BatchNormCache cache;
  batch_norm(x, p, Mode::train, &cache);
  const BatchNormGrads g = batch_norm_backward(r, p, cache);
  const GradTarget t[] = {{"x", x.values(), g.dx.values()},
                          {"gamma", p.gamma.values(), g.dgamma.values()},
                          {"beta", p.beta.values(), g.dbeta.values()}};
  const auto rep = grad_check([&] { return dot(batch_norm(x, p, Mode::train), r); }, t);
  EXPECT_TRUE(rep.passed) << rep.max_relative_error << " " << rep.worst_target;
}

TEST(Backward, AvgPoolActivationsSoftmax) {
  Rng rng(15);
  Tensor x = oracle::random_tensor(Shape{1, 5, 5, 2}, rng);
  const Tensor r = oracle::random_tensor(avg_pool(x, 2, 2).shape(), rng);
  const Tensor dx = avg_pool_backward(x.shape(), r, 2, 2);
  const GradTarget t[] = {{"x", x.values(), dx.values()}};
  EXPECT_TRUE(grad_check([&] { return dot(avg_pool(x, 2, 2), r); }, t).passed);

  for (Activation act : {Activation::mish, Activation::relu}) {
    Tensor a = oracle::random_tensor(Shape{1, 3, 3, 2}, rng);
    const Tensor ra = oracle::random_tensor(a.shape(), rng);
    const Tensor da = activate_backward(a, ra, act);
    const GradTarget ta[] = {{"x", a.values(), da.values()}};
    EXPECT_TRUE(grad_check([&] { return dot(activate(a, act), ra); }, ta).passed);
  }

  Matrix m = oracle::random_matrix(3, 5, rng, 2);
  const Matrix rm = oracle::random_matrix(3, 5, rng);
  const Matrix dm = softmax_rows_backward(softmax_rows(m), rm);
  const GradTarget ts[] = {{"m", m.data, dm.data}};
  auto obj = [&] {
    const Matrix p = softmax_rows(m);
    Scalar s = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) s += p.data[i] * rm.data[i];
    return s;
  };
  EXPECT_TRUE(grad_check(obj, ts).passed);
}

TEST(Serialize, RoundTripIsBitExact) {
  Rng rng(16);
  Tensor t = oracle::random_tensor(Shape{2, 3, 4, 5}, rng, -1e300, 1e300);
  t[3] = -0.0;
  t[4] = std::numeric_limits<Scalar>::denorm_min();
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(ss.str().size(), 44 + t.size() * sizeof(Scalar));
  EXPECT_EQ(ss.str().substr(0, 4), "AAPT");
  const Tensor back = read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data(), t.data(), t.size() * sizeof(Scalar)), 0);
}

TEST(Serialize, RejectsCorruptInput) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor(bad), FormatError);
  std::stringstream full;
  write_tensor(full, Tensor(Shape{1, 2, 2, 1}, 1));
  const std::string bytes = full.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor(truncated), FormatError);
  std::string wrong = bytes;
  wrong[4] = 9;
  std::stringstream version(wrong);
  EXPECT_THROW(read_tensor(version), FormatError);
}

TEST(Serialize, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "aapt_tensor_roundtrip.bin";
  Rng rng(17);
  const Tensor t = oracle::random_tensor(Shape{1, 2, 3, 4}, rng);
  save_tensor(path, t);
  EXPECT_EQ(load_tensor(path), t);
  std::filesystem::remove(path);
}
