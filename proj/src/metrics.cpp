#include "aapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "aapt/blurpool.hpp"
#include "aapt/errors.hpp"
#include "aapt/rng.hpp"

namespace aapt {

std::vector<double> keypoint_errors(const std::vector<EvalRecord>& records) {
  std::vector<double> errors;
  errors.reserve(records.size() * kNumKeypoints);
  for (const auto& r : records) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      if (!r.ground_truth.visible[i]) continue;
      const Keypoint& p = r.prediction.points[i];
      const Keypoint& g = r.ground_truth.points[i];
      const double dx = p.x - g.x, dy = p.y - g.y;
      errors.push_back(std::sqrt(dx * dx + dy * dy));
    }
  }
  return errors;
}

EpeStats epe(const std::vector<EvalRecord>& records) {
  std::vector<double> e = keypoint_errors(records);
  if (e.empty()) throw ConfigError("epe: no records");
  double total = 0;
  for (double v : e) total += v;
  const std::size_t mid = (e.size() - 1) / 2;
  std::nth_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(mid), e.end());
  return EpeStats{total / static_cast<double>(e.size()), e[mid]};
}

namespace {

std::vector<double> curve(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("pck: empty threshold list");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ConfigError("pck: thresholds must be ascending");
  }
  if (errors.empty()) throw ConfigError("pck: no records");
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double t : thresholds) {
    const auto hits = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(static_cast<double>(hits) / static_cast<double>(sorted.size()));
  }
  return out;
}

}  // namespace

std::vector<double> pck_curve(const std::vector<EvalRecord>& records, const std::vector<double>& thresholds) {
  return curve(keypoint_errors(records), thresholds);
}

std::vector<double> pckh_curve(const std::vector<EvalRecord>& records, const std::vector<double>& thresholds) {
  std::vector<double> errors;
  for (const auto& r : records) {
    if (!r.norm_scale) throw ConfigError("pckh: record '" + r.id + "' has no norm_scale");
    if (!(*r.norm_scale > 0)) throw ConfigError("pckh: record '" + r.id + "' has non-positive norm_scale");
    for (double e : keypoint_errors({r})) errors.push_back(e / *r.norm_scale);
  }
  return curve(errors, thresholds);
}

double auc(const std::vector<double>& c, const std::vector<double>& thresholds) {
  if (c.size() != thresholds.size()) throw ConfigError("auc: curve and thresholds differ in length");
  if (c.size() < 2) throw ConfigError("auc: need at least two points");
  const double width = thresholds.back() - thresholds.front();
  if (!(width > 0)) throw ConfigError("auc: threshold range is empty");
  double area = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    area += 0.5 * (c[i] + c[i - 1]) * (thresholds[i] - thresholds[i - 1]);
  }
  return area / width;
}

std::vector<double> threshold_grid(double lo, double hi, std::size_t steps) {
  if (steps < 2) throw ConfigError("threshold_grid: need at least two steps");
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  return out;
}

std::vector<double> pck_thresholds() { return threshold_grid(0, 30, 61); }
std::vector<double> pckh_thresholds() { return threshold_grid(0, 1, 51); }

namespace {

struct Line {
  std::string id;
  std::vector<double> values;
  std::size_t number = 0;
};

std::vector<Line> read_lines(std::istream& in, const std::string& source) {
  std::vector<Line> out;
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const std::string text = raw.substr(0, raw.find('#'));
    std::istringstream ss(text);
    Line l;
    l.number = n;
    if (!(ss >> l.id)) continue;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
        l.values.push_back(v);
      } catch (const std::exception&) {
        throw FormatError(source + ":" + std::to_string(n) + ": bad number '" + tok + "'");
      }
    }
    out.push_back(std::move(l));
  }
  return out;
}

KeypointSet take_points(const std::vector<double>& v, std::size_t offset) {
  KeypointSet k;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) k.points[i] = {v[offset + 2 * i], v[offset + 2 * i + 1]};
  return k;
}

std::optional<double> take_scale(const Line& l, std::size_t index, const std::string& source) {
  if (l.values.size() <= index) return std::nullopt;
  if (!(l.values[index] > 0)) {
    throw FormatError(source + ":" + std::to_string(l.number) + ": norm_scale must be positive");
  }
  return l.values[index];
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::map<std::string, Line> keyed(std::vector<Line> lines, const std::string& source) {
  std::map<std::string, Line> out;
  for (auto& l : lines) {
    const std::size_t n = l.values.size();
    if (n != kNumOutputs && n != kNumOutputs + 1) {
      throw FormatError(source + ":" + std::to_string(l.number) + ": expected 42 or 43 values, got " +
                        std::to_string(n));
    }
    const std::string id = l.id;
    if (!out.emplace(id, std::move(l)).second) throw FormatError(source + ": duplicate id '" + id + "'");
  }
  return out;
}

}  // namespace

std::vector<EvalRecord> parse_records(std::istream& in, const std::string& source) {
  std::vector<EvalRecord> out;
  for (const Line& l : read_lines(in, source)) {
    const std::size_t n = l.values.size();
    if (n != 2 * kNumOutputs && n != 2 * kNumOutputs + 1) {
      throw FormatError(source + ":" + std::to_string(l.number) + ": expected 84 or 85 values, got " +
                        std::to_string(n));
    }
    out.push_back(EvalRecord{l.id, take_points(l.values, 0), take_points(l.values, kNumOutputs),
                             take_scale(l, 2 * kNumOutputs, source)});
  }
  return out;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  return parse_records(in, path.string());
}

std::vector<EvalRecord> read_record_pair(const std::filesystem::path& pred, const std::filesystem::path& gt) {
  std::ifstream pin = open(pred), gin = open(gt);
  const auto p = keyed(read_lines(pin, pred.string()), pred.string());
  const auto g = keyed(read_lines(gin, gt.string()), gt.string());
  std::vector<EvalRecord> out;
  for (const auto& [id, gl] : g) {
    const auto it = p.find(id);
    if (it == p.end()) throw FormatError(pred.string() + ": no prediction for id '" + id + "'");
    out.push_back(EvalRecord{id, take_points(it->second.values, 0), take_points(gl.values, 0),
                             take_scale(gl, kNumOutputs, gt.string())});
  }
  if (p.size() != g.size()) throw FormatError(pred.string() + ": predictions without ground truth");
  return out;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<double>& thresholds,
                     const std::vector<double>& values) {
  if (thresholds.size() != values.size()) throw ConfigError("write_curve_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "threshold,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) out << thresholds[i] << ',' << values[i] << '\n';
}

MetricSet evaluate(const std::vector<EvalRecord>& records) {
  MetricSet m;
  m.epe = epe(records);
  const auto t = pck_thresholds();
  m.pck = pck_curve(records, t);
  m.pck_auc = auc(m.pck, t);
  return m;
}

ShiftReport shift_robustness(const Predictor& predict, const std::vector<Sample>& data, int max_shift,
                             std::uint64_t seed) {
  if (max_shift < 0) throw ConfigError("shift_robustness: max_shift must be >= 0");
  if (data.empty()) throw ConfigError("shift_robustness: empty dataset");
  Rng rng(seed);
  std::vector<EvalRecord> base, moved;
  ShiftReport r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const auto dy = rng.between(-max_shift, max_shift);
    const auto dx = rng.between(-max_shift, max_shift);
    const Shape& sh = s.image.shape();
    KeypointSet gt = s.keypoints;
    bool inside = true;
    for (auto& p : gt.points) {
      p.x += static_cast<double>(dx);
      p.y += static_cast<double>(dy);
      if (p.x < 0 || p.y < 0 || p.x > static_cast<double>(sh.w - 1) || p.y > static_cast<double>(sh.h - 1)) {
        inside = false;
      }
    }
    if (!inside) {
      ++r.skipped;
      continue;
    }
    const std::string id = std::to_string(i);
    base.push_back(EvalRecord{id, predict(s.image), s.keypoints, std::nullopt});
    const Tensor img = (dx == 0 && dy == 0) ? s.image : shift(s.image, dy, dx, Boundary::reflect);
    moved.push_back(EvalRecord{id, predict(img), gt, std::nullopt});
  }
  r.evaluated = base.size();
  if (base.empty()) throw ConfigError("shift_robustness: every sample left the frame");
  r.baseline = evaluate(base);
  r.shifted = evaluate(moved);
  r.epe_degradation = r.shifted.epe.mean - r.baseline.epe.mean;
  r.auc_degradation = r.baseline.pck_auc - r.shifted.pck_auc;
  return r;
}

}  // namespace aapt
