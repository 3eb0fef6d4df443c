#include "aapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aapt/rng.hpp"

namespace aapt {

namespace {

constexpr double kBlobSigma = 1.0;
constexpr double kBoneLevel = 0.5;
constexpr double kNoise = 0.02;
constexpr int kMaxAttempts = 10000;

bool propose(Rng& rng, double size, KeypointSet& k) {
  const double margin = 2.0;
  const double scale = std::max(size / 32.0, 0.6);
  const double separation = size >= 32 ? 2.0 : 1.0;
  const double cx = rng.uniform(0.35, 0.65) * size;
  const double cy = rng.uniform(0.55, 0.8) * size;
  const double heading = -std::numbers::pi / 2 + rng.uniform(-0.5, 0.5);
  k.points[0] = {std::round(cx), std::round(cy)};
  for (std::size_t f = 0; f < 5; ++f) {
    double angle = heading + (static_cast<double>(f) - 2.0) * 0.38 + rng.uniform(-0.1, 0.1);
    double x = cx, y = cy;
    const double palm = (f == 0 ? 3.0 : 4.5) * scale * rng.uniform(0.9, 1.1);
    for (std::size_t j = 0; j < 4; ++j) {
      const double len = j == 0 ? palm : 3.0 * scale * rng.uniform(0.85, 1.15);
      if (j > 0) angle += rng.uniform(-0.25, 0.25);
      x += len * std::cos(angle);
      y += len * std::sin(angle);
      k.points[1 + 4 * f + j] = {std::round(x), std::round(y)};
    }
  }
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Keypoint& p = k.points[i];
    if (p.x < margin || p.y < margin || p.x > size - 1 - margin || p.y > size - 1 - margin) return false;
    for (std::size_t j = 0; j < i; ++j) {
      const Keypoint& q = k.points[j];
      if (std::max(std::abs(p.x - q.x), std::abs(p.y - q.y)) < separation) return false;
    }
  }
  return true;
}

void draw_segment(Tensor& img, const Keypoint& a, const Keypoint& b) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 3)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const auto x = static_cast<std::size_t>(std::lround(a.x + t * (b.x - a.x)));
    const auto y = static_cast<std::size_t>(std::lround(a.y + t * (b.y - a.y)));
    img.at(0, y, x, 1) = static_cast<Scalar>(kBoneLevel);
  }
}

}  // namespace

Sample synth_hand(std::uint64_t seed, std::size_t image_size) {
  if (image_size < 16) throw ConfigError("synth_hand: image_size must be >= 16");
  Rng rng(seed);
  const double size = static_cast<double>(image_size);
  Sample s{Tensor(Shape{1, image_size, image_size, 3}), {}};
  int attempt = 0;
  while (!propose(rng, size, s.keypoints)) {
    if (++attempt == kMaxAttempts) throw NumericError("synth_hand: could not place keypoints");
  }
  Tensor& img = s.image;
  for (auto& v : img.values()) v = static_cast<Scalar>(kNoise * rng.uniform());
  const auto& p = s.keypoints.points;
  for (std::size_t f = 0; f < 5; ++f) {
    draw_segment(img, p[0], p[1 + 4 * f]);
    for (std::size_t j = 0; j + 1 < 4; ++j) draw_segment(img, p[1 + 4 * f + j], p[2 + 4 * f + j]);
  }
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      double best = 0;
      for (const Keypoint& k : p) {
        const double d2 = (static_cast<double>(x) - k.x) * (static_cast<double>(x) - k.x) +
                          (static_cast<double>(y) - k.y) * (static_cast<double>(y) - k.y);
        best = std::max(best, std::exp(-d2 / (2 * kBlobSigma * kBlobSigma)));
      }
      Scalar& r = img.at(0, y, x, 0);
      r = std::max(r, static_cast<Scalar>(best));
    }
  }
  return s;
}

}  // namespace aapt
