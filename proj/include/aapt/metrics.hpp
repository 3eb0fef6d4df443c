#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aapt/keypoints.hpp"
#include "aapt/synth.hpp"

namespace aapt {

struct EvalRecord {
  std::string id;
  KeypointSet prediction;
  KeypointSet ground_truth;
  std::optional<double> norm_scale;
};

struct EpeStats {
  double mean = 0;
  double median = 0;  // lower-middle element for even counts
};

/// Euclidean error of every ground-truth-visible keypoint, record order.
std::vector<double> keypoint_errors(const std::vector<EvalRecord>& records);

EpeStats epe(const std::vector<EvalRecord>& records);
/// Fraction of keypoints with error <= threshold (pixels).
std::vector<double> pck_curve(const std::vector<EvalRecord>& records, const std::vector<double>& thresholds);
/// As pck_curve with each error divided by its record's norm_scale.
std::vector<double> pckh_curve(const std::vector<EvalRecord>& records, const std::vector<double>& thresholds);
/// Trapezoidal area under the curve divided by the threshold range width.
double auc(const std::vector<double>& curve, const std::vector<double>& thresholds);

/// `steps` evenly spaced values from lo to hi inclusive.
std::vector<double> threshold_grid(double lo, double hi, std::size_t steps);
std::vector<double> pck_thresholds();   // 0..30 px, 61 steps
std::vector<double> pckh_thresholds();  // 0..1, 51 steps

// Record file: one record per line, whitespace separated,
//   id x1 y1 ... x21 y21 gx1 gy1 ... gx21 gy21 [norm_scale]
// with predictions first. Blank lines and '#' comments are ignored.
std::vector<EvalRecord> parse_records(std::istream& in, const std::string& source = "<input>");
std::vector<EvalRecord> read_records(const std::filesystem::path& path);
// Keypoint file: id x1 y1 ... x21 y21 [norm_scale]. Predictions and ground
// truth are paired by id; norm_scale comes from the ground-truth file.
std::vector<EvalRecord> read_record_pair(const std::filesystem::path& pred, const std::filesystem::path& gt);

/// CSV with header "threshold,value".
void write_curve_csv(const std::filesystem::path& path, const std::vector<double>& thresholds,
                     const std::vector<double>& values);

struct MetricSet {
  EpeStats epe;
  double pck_auc = 0;
  std::vector<double> pck;  // on pck_thresholds()
};

MetricSet evaluate(const std::vector<EvalRecord>& records);

using Predictor = std::function<KeypointSet(const Tensor&)>;

struct ShiftReport {
  MetricSet baseline;
  MetricSet shifted;
  double epe_degradation = 0;  // shifted mean EPE - baseline mean EPE
  double auc_degradation = 0;  // baseline AUC - shifted AUC
  std::size_t evaluated = 0;
  std::size_t skipped = 0;     // a shifted keypoint left the frame
};

/// Per sample, draws (dy, dx) uniformly from [-max_shift, max_shift]^2,
/// reflect-shifts the image and translates the ground truth by the same
/// amount. Both metric sets cover the same non-skipped samples.
ShiftReport shift_robustness(const Predictor& predict, const std::vector<Sample>& data, int max_shift,
                             std::uint64_t seed);

}  // namespace aapt
