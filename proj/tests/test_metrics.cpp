#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aapt/blurpool.hpp"
#include "aapt/metrics.hpp"
#include "aapt/rng.hpp"
#include "aapt/training.hpp"

using namespace aapt;

namespace {

std::vector<EvalRecord> random_records(std::size_t n, std::uint64_t seed, bool scaled) {
  Rng rng(seed);
  std::vector<EvalRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = "r" + std::to_string(i);
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      const Keypoint g{rng.uniform(0, 200), rng.uniform(0, 200)};
      out[i].ground_truth.points[j] = g;
      const double spread = rng.uniform() < 0.1 ? 60 : 12;
      out[i].prediction.points[j] = {g.x + std::round(rng.uniform(-spread, spread)),
                                     g.y + std::round(rng.uniform(-spread, spread))};
    }
    if (scaled) out[i].norm_scale = rng.uniform(5, 50);
  }
  return out;
}

EvalRecord offset_record(double dx, double dy) {
  EvalRecord r;
  r.id = "fixture";
  for (std::size_t j = 0; j < kNumKeypoints; ++j) {
    r.ground_truth.points[j] = {double(j), 2.0 * double(j)};
    r.prediction.points[j] = {double(j) + dx, 2.0 * double(j) + dy};
  }
  return r;
}

// Brute-force: every (record, keypoint) error, recomputed per threshold.
std::vector<double> counting_oracle(const std::vector<EvalRecord>& rs, const std::vector<double>& ts, bool scaled) {
  std::vector<double> out;
  for (double t : ts) {
    std::size_t hit = 0, total = 0;
    for (const auto& r : rs)
      for (std::size_t j = 0; j < kNumKeypoints; ++j) {
        const double dx = r.prediction.points[j].x - r.ground_truth.points[j].x;
        const double dy = r.prediction.points[j].y - r.ground_truth.points[j].y;
        double e = std::sqrt(dx * dx + dy * dy);
        if (scaled) e /= *r.norm_scale;
        hit += e <= t;
        ++total;
      }
    out.push_back(double(hit) / double(total));
  }
  return out;
}

std::string record_line(const EvalRecord& r) {
  std::ostringstream s;
  s.precision(17);
  s << r.id;
  for (const auto& p : r.prediction.points) s << ' ' << p.x << ' ' << p.y;
  for (const auto& p : r.ground_truth.points) s << ' ' << p.x << ' ' << p.y;
  if (r.norm_scale) s << ' ' << *r.norm_scale;
  return s.str();
}

}  // namespace

TEST(Epe, Examples) {
  EXPECT_EQ(epe({offset_record(0, 0)}).mean, 0);
  EXPECT_EQ(epe({offset_record(0, 0)}).median, 0);
  const EpeStats s = epe({offset_record(3, 4), offset_record(-3, 4)});
  EXPECT_DOUBLE_EQ(s.mean, 5);
  EXPECT_DOUBLE_EQ(s.median, 5);
  EXPECT_THROW(epe({}), ConfigError);
}

TEST(Epe, MeanAndLowerMedian) {
  EvalRecord r = offset_record(0, 0);
  for (std::size_t j = 3; j < kNumKeypoints; ++j) r.ground_truth.visible[j] = false;
  r.prediction.points[0].x += 1;
  r.prediction.points[1].x += 2;
  r.prediction.points[2].y += 9;
  const EpeStats s = epe({r});
  EXPECT_DOUBLE_EQ(s.mean, 4);
  EXPECT_DOUBLE_EQ(s.median, 2);
  r.ground_truth.visible[3] = true;
  EXPECT_DOUBLE_EQ(epe({r}).median, 1);
}

TEST(Epe, MatchesSummationOracle) {
  const auto rs = random_records(100, 1, false);
  std::vector<double> errs;
  for (const auto& r : rs)
    for (std::size_t j = 0; j < kNumKeypoints; ++j)
      errs.push_back(std::sqrt(std::pow(r.prediction.points[j].x - r.ground_truth.points[j].x, 2) +
                               std::pow(r.prediction.points[j].y - r.ground_truth.points[j].y, 2)));
  double sum = 0;
  for (double e : errs) sum += e;
  std::sort(errs.begin(), errs.end());
  const EpeStats s = epe(rs);
  EXPECT_NEAR(s.mean, sum / double(errs.size()), 1e-12);
  EXPECT_EQ(s.median, errs[(errs.size() - 1) / 2]);
  EXPECT_EQ(keypoint_errors(rs).size(), 2100u);
}

TEST(Pck, Examples) {
  const auto ts = pck_thresholds();
  ASSERT_EQ(ts.size(), 61u);
  EXPECT_EQ(ts.front(), 0);
  EXPECT_EQ(ts.back(), 30);
  for (double v : pck_curve({offset_record(0, 0)}, ts)) EXPECT_EQ(v, 1);
  const auto step = pck_curve({offset_record(3, 4)}, ts);
  for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_EQ(step[i], ts[i] >= 5 ? 1 : 0) << ts[i];
  EXPECT_THROW(pck_curve({offset_record(0, 0)}, {}), ConfigError);
  EXPECT_THROW(pck_curve({offset_record(0, 0)}, {2, 1}), ConfigError);
}

TEST(Pck, MatchesCountingOracleExactly) {
  const auto rs = random_records(100, 2, true);
  const auto ts = pck_thresholds();
  const auto curve = pck_curve(rs, ts);
  EXPECT_EQ(curve, counting_oracle(rs, ts, false));
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i], curve[i - 1]);
  for (double v : curve) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  const auto hs = pckh_thresholds();
  ASSERT_EQ(hs.size(), 51u);
  EXPECT_EQ(pckh_curve(rs, hs), counting_oracle(rs, hs, true));
}

TEST(Pckh, UnitScaleEqualsPck) {
  auto rs = random_records(30, 3, false);
  for (auto& r : rs) r.norm_scale = 1;
  const auto ts = pck_thresholds();
  EXPECT_EQ(pckh_curve(rs, ts), pck_curve(rs, ts));
}

TEST(Pckh, DoublingScaleDoublesThreshold) {
  auto rs = random_records(30, 4, true);
  const std::vector<double> ts{0.05, 0.1, 0.2, 0.3, 0.45};
  std::vector<double> doubled;
  for (double t : ts) doubled.push_back(2 * t);
  const auto before = pckh_curve(rs, doubled);
  for (auto& r : rs) *r.norm_scale *= 2;
  EXPECT_EQ(pckh_curve(rs, ts), before);
}

TEST(Pckh, MissingOrBadScaleRejected) {
  auto rs = random_records(3, 5, true);
  rs[1].norm_scale.reset();
  EXPECT_THROW(pckh_curve(rs, pckh_thresholds()), ConfigError);
  rs[1].norm_scale = 0;
  EXPECT_THROW(pckh_curve(rs, pckh_thresholds()), ConfigError);
}

TEST(Auc, Examples) {
  const auto ts = pck_thresholds();
  EXPECT_DOUBLE_EQ(auc(std::vector<double>(ts.size(), 1.0), ts), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>(ts.size(), 0.5), ts), 0.5);
  std::vector<double> ramp;
  for (double t : ts) ramp.push_back(t / 30);
  EXPECT_NEAR(auc(ramp, ts), 0.5, 1e-15);
  EXPECT_THROW(auc({1}, {0}), ConfigError);
  EXPECT_THROW(auc({1, 1}, {0, 1, 2}), ConfigError);
}

TEST(Auc, BoundedByCurve) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ts = pck_thresholds();
    const auto curve = pck_curve(random_records(10, 100 + seed, false), ts);
    const double a = auc(curve, ts);
    EXPECT_GE(a, *std::min_element(curve.begin(), curve.end()));
    EXPECT_LE(a, *std::max_element(curve.begin(), curve.end()));
  }
}

TEST(Records, ParseRoundTrip) {
  const auto rs = random_records(5, 6, true);
  std::stringstream in;
  in << "# header\n\n";
  for (const auto& r : rs) in << record_line(r) << '\n';
  const auto back = parse_records(in);
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back[i].id, rs[i].id);
    EXPECT_EQ(back[i].prediction.points[20].y, rs[i].prediction.points[20].y);
    EXPECT_EQ(back[i].ground_truth.points[3].x, rs[i].ground_truth.points[3].x);
    EXPECT_EQ(*back[i].norm_scale, *rs[i].norm_scale);
  }
}

TEST(Records, ParseErrorsNameTheLine) {
  std::stringstream in;
  in << record_line(offset_record(1, 1)) << "\nbad 1 2 3\n";
  try {
    parse_records(in, "preds.txt");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("preds.txt:2"), std::string::npos) << e.what();
  }
  std::string line = record_line(offset_record(0, 0));
  line.replace(line.find(' ') + 1, 1, "q");
  std::stringstream junk(line);
  EXPECT_THROW(parse_records(junk), FormatError);
}

TEST(Records, PairFilesJoinById) {
  const auto dir = std::filesystem::temp_directory_path() / "aapt_metrics_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream p(dir / "pred.txt"), g(dir / "gt.txt");
    for (const char* id : {"b", "a"}) {
      p << id;
      for (std::size_t j = 0; j < 42; ++j) p << ' ' << (id[0] == 'a' ? 3 : 0);
      p << '\n';
    }
    for (const char* id : {"a", "b"}) {
      g << id;
      for (std::size_t j = 0; j < 42; ++j) g << ' ' << 0;
      g << " 10\n";
    }
  }
  const auto rs = read_record_pair(dir / "pred.txt", dir / "gt.txt");
  ASSERT_EQ(rs.size(), 2u);
  const EpeStats s = epe(rs);
  EXPECT_NEAR(s.mean, std::sqrt(18.0) / 2, 1e-12);
  for (const auto& r : rs) EXPECT_EQ(*r.norm_scale, 10);
  {
    std::ofstream g(dir / "gt.txt", std::ios::app);
    g << "c";
    for (std::size_t j = 0; j < 42; ++j) g << " 0";
    g << '\n';
  }
  EXPECT_THROW(read_record_pair(dir / "pred.txt", dir / "gt.txt"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Records, CurveCsv) {
  const auto path = std::filesystem::temp_directory_path() / "aapt_curve.csv";
  write_curve_csv(path, {0, 0.5}, {0.25, 1});
  std::ifstream in(path);
  std::string a, b, c;
  std::getline(in, a);
  std::getline(in, b);
  std::getline(in, c);
  EXPECT_EQ(a, "threshold,value");
  EXPECT_EQ(b.substr(0, 2), "0,");
  EXPECT_EQ(std::stod(c.substr(c.find(',') + 1)), 1);
  std::filesystem::remove(path);
}

TEST(ShiftRobustness, ZeroShiftIsNoOp) {
  const auto data = synth_dataset(6, 32, 7);
  std::size_t calls = 0;
  Predictor biased = [&](const Tensor& img) {
    ++calls;
    KeypointSet k;
    for (std::size_t j = 0; j < kNumKeypoints; ++j) k.points[j] = {img[j * 3] * 40, 16.0 + double(j % 5)};
    return k;
  };
  const ShiftReport r = shift_robustness(biased, data, 0, 1);
  EXPECT_EQ(r.baseline.epe.mean, r.shifted.epe.mean);
  EXPECT_EQ(r.baseline.epe.median, r.shifted.epe.median);
  EXPECT_EQ(r.baseline.pck, r.shifted.pck);
  EXPECT_EQ(r.baseline.pck_auc, r.shifted.pck_auc);
  EXPECT_EQ(r.epe_degradation, 0);
  EXPECT_EQ(r.evaluated, 6u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(calls, 12u);
}

TEST(ShiftRobustness, GroundTruthEchoHasNoDegradation) {
  const auto data = synth_dataset(12, 32, 8);
  // Recovers the applied shift by search and echoes the translated ground truth.
  Predictor echo = [&](const Tensor& img) {
    for (const auto& s : data)
      for (long long dy = -6; dy <= 6; ++dy)
        for (long long dx = -6; dx <= 6; ++dx) {
          if (shift(s.image, dy, dx, Boundary::reflect) != img) continue;
          KeypointSet k = s.keypoints;
          for (auto& p : k.points) p.x += double(dx), p.y += double(dy);
          return k;
        }
    ADD_FAILURE() << "unrecognized image";
    return KeypointSet{};
  };
  const ShiftReport r = shift_robustness(echo, data, 6, 2);
  EXPECT_EQ(r.baseline.epe.mean, 0);
  EXPECT_EQ(r.shifted.epe.mean, 0);
  EXPECT_EQ(r.epe_degradation, 0);
  EXPECT_EQ(r.auc_degradation, 0);
  EXPECT_GT(r.evaluated, 0u);
  EXPECT_EQ(r.evaluated + r.skipped, data.size());
}

TEST(ShiftRobustness, SkippedSamplesAreCounted) {
  const auto data = synth_dataset(8, 32, 9);
  Predictor zero = [](const Tensor&) { return KeypointSet{}; };
  const ShiftReport r = shift_robustness(zero, data, 12, 3);
  EXPECT_EQ(r.evaluated + r.skipped, 8u);
  EXPECT_GT(r.skipped, 0u);
  EXPECT_THROW(shift_robustness(zero, data, -1, 3), ConfigError);
}

TEST(Evaluate, AggregatesMetrics) {
  const MetricSet m = evaluate({offset_record(3, 4)});
  EXPECT_EQ(m.epe.mean, 5);
  EXPECT_EQ(m.pck.size(), 61u);
  EXPECT_NEAR(m.pck_auc, 25.25 / 30.0, 1e-12);
}
