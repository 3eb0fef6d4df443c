#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aapt/gradcheck.hpp"
#include "aapt/rng.hpp"
#include "aapt/training.hpp"
#include "oracles.hpp"

using namespace aapt;

TEST(CyclicalLr, Examples) {
  const LRSchedule s;
  EXPECT_EQ(cyclical_lr(0, s), 1e-4);
  EXPECT_EQ(cyclical_lr(6, s), 1e-1);
  EXPECT_EQ(cyclical_lr(12, s), 1e-4);
  EXPECT_NEAR(cyclical_lr(3, s), (1e-4 + 1e-1) / 2, 1e-15);
  EXPECT_NEAR(cyclical_lr(9, s), (1e-4 + 1e-1) / 2, 1e-15);
  EXPECT_THROW(cyclical_lr(-1, s), ConfigError);
}

TEST(CyclicalLr, RangeAndPeriodicity) {
  const LRSchedule s{0.001, 0.05, 2.5};
  for (int i = 0; i <= 1000; ++i) {
    const double t = 0.05 * i;
    const double lr = cyclical_lr(t, s);
    EXPECT_GE(lr, s.lr_min);
    EXPECT_LE(lr, s.lr_max);
    EXPECT_NEAR(cyclical_lr(t + 2 * s.stepsize, s), lr, 1e-15);
  }
  const LRSchedule d;
  for (int c = 0; c < 10; ++c) {
    EXPECT_EQ(cyclical_lr(12.0 * c, d), 1e-4);
    EXPECT_EQ(cyclical_lr(12.0 * c + 6, d), 1e-1);
  }
}

TEST(Sgd, Examples) {
  std::vector<Scalar> w{1}, g{2};
  std::vector<ParamRef> ps{ParamRef{"w", Shape{}, w, g}};
  sgd_step(ps, 0);
  EXPECT_EQ(w[0], 1);
  sgd_step(ps, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 0.8);

  w[0] = 1;
  for (int i = 0; i < 2; ++i) {
    g[0] = 2 * w[0];
    sgd_step(ps, 0.1);
  }
  EXPECT_NEAR(w[0], 0.64, 1e-15);
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
  std::vector<Scalar> w{1, 2}, g{0, std::nan("")};
  std::vector<ParamRef> ps{ParamRef{"dense1.layer0.expand.kernel", Shape{}, w, g}};
  try {
    sgd_step(ps, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("dense1.layer0.expand.kernel"), std::string::npos);
  }
  EXPECT_EQ(w[0], 1);
}

TEST(Sgd, MomentumAccumulates) {
  std::vector<Scalar> w{0}, g{1};
  std::vector<ParamRef> ps{ParamRef{"w", Shape{}, w, g}};
  Sgd opt(0.5);
  opt.step(ps, 1);
  EXPECT_EQ(w[0], -1);
  opt.step(ps, 1);
  EXPECT_EQ(w[0], -2.5);
  Sgd plain;
  plain.step(ps, 1);
  EXPECT_EQ(w[0], -3.5);
}

TEST(Sgd, SmallStepDecreasesLoss) {
  Rng rng(1);
  std::vector<Scalar> w(5), g(5);
  for (auto& v : w) v = static_cast<Scalar>(rng.uniform(-2, 2));
  auto loss = [&] {
    double l = 0;
    for (std::size_t i = 0; i < w.size(); ++i) l += (i + 1) * w[i] * w[i] + std::sin(w[i]);
    return l;
  };
  std::vector<ParamRef> ps{ParamRef{"w", Shape{}, w, g}};
  for (int step = 0; step < 20; ++step) {
    for (std::size_t i = 0; i < w.size(); ++i) g[i] = 2 * (i + 1) * w[i] + std::cos(w[i]);
    const double before = loss();
    sgd_step(ps, 1e-3);
    EXPECT_LT(loss(), before);
  }
}

TEST(Loss, Examples) {
  const Tensor gt(Shape{1, 1, 1, 42}, 0.5);
  EXPECT_EQ(coordinate_loss(gt, gt), 0);
  const Tensor off(Shape{1, 1, 1, 42}, 0.6);
  EXPECT_NEAR(coordinate_loss(off, gt), 0.01, 1e-15);
  EXPECT_NEAR(coordinate_loss(off, gt, LossKind::mae), 0.1, 1e-15);
  Tensor nan = gt;
  nan[5] = std::nan("");
  EXPECT_THROW(coordinate_loss(nan, gt), NumericError);
  EXPECT_THROW(coordinate_loss(Tensor(Shape{1, 1, 1, 40}), gt), ShapeError);

  KeypointSet a, b;
  for (auto& p : b.points) p = {0.1, -0.1};
  EXPECT_NEAR(coordinate_loss(a, b), 0.01, 1e-15);
}

TEST(Loss, MatchesSummationOracle) {
  Rng rng(2);
  const Tensor p = oracle::random_tensor(Shape{3, 1, 1, 42}, rng);
  const Tensor q = oracle::random_tensor(Shape{3, 1, 1, 42}, rng);
  double sq = 0, ab = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = double(p[i]) - double(q[i]);
    sq += d * d;
    ab += std::abs(d);
  }
  EXPECT_NEAR(coordinate_loss(p, q), sq / 126, 1e-14);
  EXPECT_NEAR(coordinate_loss(p, q, LossKind::mae), ab / 126, 1e-14);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  if (!kDoublePrecision) GTEST_SKIP() << "needs 64-bit build";
  Rng rng(3);
  Tensor p = oracle::random_tensor(Shape{2, 1, 1, 42}, rng);
  const Tensor q = oracle::random_tensor(Shape{2, 1, 1, 42}, rng);
  for (LossKind kind : {LossKind::mse, LossKind::mae}) {
    Tensor grad;
    coordinate_loss(p, q, kind, &grad);
    const GradTarget t[] = {{"pred", p.values(), grad.values()}};
    const auto r = grad_check([&] { return static_cast<Scalar>(coordinate_loss(p, q, kind)); }, t);
    EXPECT_TRUE(r.passed) << r.max_relative_error;
  }
}

TEST(Synth, Deterministic) {
  const Sample a = synth_hand(17, 32), b = synth_hand(17, 32), c = synth_hand(18, 32);
  EXPECT_EQ(a.image, b.image);
  for (std::size_t j = 0; j < kNumKeypoints; ++j) {
    EXPECT_EQ(a.keypoints.points[j].x, b.keypoints.points[j].x);
    EXPECT_EQ(a.keypoints.points[j].y, b.keypoints.points[j].y);
  }
  EXPECT_NE(a.image, c.image);
  EXPECT_THROW(synth_hand(1, 15), ConfigError);
}

TEST(Synth, KeypointsInsideImage) {
  for (std::size_t size : {16u, 32u, 64u}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Sample s = synth_hand(seed, size);
      EXPECT_EQ(s.image.shape(), (Shape{1, size, size, 3}));
      for (const auto& p : s.keypoints.points) {
        EXPECT_GE(p.x, 0);
        EXPECT_GE(p.y, 0);
        EXPECT_LE(p.x, double(size - 1));
        EXPECT_LE(p.y, double(size - 1));
      }
    }
  }
}

TEST(Synth, BlobPeaksAtKeypoints) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Sample s = synth_hand(seed, 32);
    for (const auto& p : s.keypoints.points) {
      const long long cx = std::lround(p.x), cy = std::lround(p.y);
      long long bx = cx, by = cy;
      Scalar best = -1;
      for (long long y = cy - 1; y <= cy + 1; ++y)
        for (long long x = cx - 1; x <= cx + 1; ++x) {
          if (x < 0 || y < 0 || x >= 32 || y >= 32) continue;
          const Scalar v = s.image.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
          if (v > best) best = v, bx = x, by = y;
        }
      EXPECT_LE(std::abs(double(bx) - p.x), 0.5);
      EXPECT_LE(std::abs(double(by) - p.y), 0.5);
    }
  }
}

TEST(Synth, DatasetUsesPerImageSeeds) {
  const auto data = synth_dataset(3, 16, 4);
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(data[2].image, synth_dataset(3, 16, 4)[2].image);
  EXPECT_NE(data[0].image, data[1].image);
}

TEST(Training, ZeroLearningRateKeepsLossConstant) {
  Network net(NetworkConfig::preset("gradcheck"));
  TrainOptions o;
  o.n_images = 4;
  o.epochs = 3;
  o.batch_size = 2;
  o.fixed_lr = 0.0;
  const TrainState s = train_toy(net, o);
  ASSERT_EQ(s.log.size(), 3u);
  EXPECT_EQ(s.log[0].lr, 0);
  EXPECT_EQ(s.log[1].loss, s.log[0].loss);
  EXPECT_EQ(s.log[2].loss, s.log[0].loss);
  Network fresh = build_network(net.config(), o.seed);
  const auto a = net.params(), b = fresh.params();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].trainable()) EXPECT_TRUE(std::equal(a[i].value.begin(), a[i].value.end(), b[i].value.begin()));
}

TEST(Training, BitReproducible) {
  TrainOptions o;
  o.n_images = 4;
  o.epochs = 4;
  o.batch_size = 2;
  Network a(NetworkConfig::preset("gradcheck")), b(NetworkConfig::preset("gradcheck"));
  const TrainState sa = train_toy(a, o), sb = train_toy(b, o);
  ASSERT_EQ(sa.log.size(), sb.log.size());
  for (std::size_t i = 0; i < sa.log.size(); ++i) {
    EXPECT_EQ(sa.log[i].loss, sb.log[i].loss);
    EXPECT_EQ(sa.log[i].train_epe, sb.log[i].train_epe);
  }
  EXPECT_EQ(sa.step, 8u);
  o.seed = 43;
  Network c(NetworkConfig::preset("gradcheck"));
  EXPECT_NE(train_toy(c, o).log.back().loss, sa.log.back().loss);
}

TEST(Training, LogAndCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "aapt_train_test";
  std::filesystem::create_directories(dir);
  TrainOptions o;
  o.n_images = 2;
  o.epochs = 3;
  o.batch_size = 2;
  o.log_csv = dir / "log.csv";
  o.checkpoint = dir / "w.aapw";
  o.checkpoint_every = 1;
  Network net(NetworkConfig::preset("gradcheck"));
  const TrainState s = train_toy(net, o);
  std::ifstream in(o.log_csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,lr,loss,train_epe");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u);
  Network back = load_weights(o.checkpoint, net.config());
  const Tensor x = synth_hand(1, 16).image;
  EXPECT_EQ(back.forward(x, Mode::infer), net.forward(x, Mode::infer));
  EXPECT_EQ(s.epoch, 3u);
  std::filesystem::remove_all(dir);
}

TEST(Training, DivergenceAborts) {
  Network net(NetworkConfig::preset("gradcheck"));
  TrainOptions o;
  o.n_images = 2;
  o.epochs = 50;
  o.batch_size = 2;
  o.fixed_lr = 1e6;
  EXPECT_THROW(train_toy(net, o), NumericError);
}

TEST(Training, MeanEpeOfPerfectPredictorIsZero) {
  const auto data = synth_dataset(2, 16, 1);
  Network net(NetworkConfig::preset("gradcheck"));
  EXPECT_GT(mean_epe(net, data), 0);
}
