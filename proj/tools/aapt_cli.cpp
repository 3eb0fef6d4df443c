#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aapt/blurpool.hpp"
#include "aapt/gradsuite.hpp"
#include "aapt/metrics.hpp"
#include "aapt/network.hpp"
#include "aapt/training.hpp"

namespace fs = std::filesystem;
using namespace aapt;

namespace {

struct Common {
  std::string config;
  std::string preset = "default";
  std::vector<std::string> overrides;
  std::uint64_t seed = 42;
  std::string precision = kDoublePrecision ? "64" : "32";
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_preset) {
  c.preset = default_preset;
  cmd->add_option("--config", c.config, "Network config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "Base config: default, tiny, gradcheck, arch1..arch12")
      ->capture_default_str();
  cmd->add_option("--set", c.overrides, "Config override key=value, applied after --config");
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--precision", c.precision, "Expected scalar width of this build")
      ->check(CLI::IsMember({"32", "64"}))
      ->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

NetworkConfig resolve(const Common& c) {
  const std::string built = kDoublePrecision ? "64" : "32";
  if (c.precision != built) {
    throw ConfigError("this binary was built with " + built + "-bit scalars; --precision " + c.precision +
                      " needs a rebuild with AAPT_SINGLE_PRECISION " + (c.precision == "32" ? "ON" : "OFF"));
  }
  NetworkConfig cfg = NetworkConfig::preset(c.preset);
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = NetworkConfig::parse(ss.str(), cfg);
  }
  std::string text;
  for (const auto& o : c.overrides) text += o + "\n";
  return NetworkConfig::parse(text, cfg);
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

std::string shape_text(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

int cmd_summary(const Common& c, bool filters, bool show_config) {
  const NetworkConfig cfg = resolve(c);
  Network net(cfg);
  const Shape input{1, cfg.input_height, cfg.input_width, cfg.input_channels};
  const ParamReport params = count_params(net);
  const FlopReport flops = count_flops(net, input);
  std::printf("%-32s %-14s %12s %14s\n", "layer", "output", "params", "flops");
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const LayerStat& s = params.items[i];
    std::printf("%-32s %-14s %12zu %14llu\n", s.name.c_str(), shape_text(s.output).c_str(), s.params,
                static_cast<unsigned long long>(2 * flops.items[i].macs));
  }
  std::printf("%-32s %-14s %12zu %14llu\n", "total", "", params.total,
              static_cast<unsigned long long>(flops.total_flops));
  std::printf("spatial:");
  for (std::size_t v : cfg.spatial_trace()) std::printf(" %zu", v);
  std::printf("\n");
  for (const auto& w : net.warnings()) std::printf("warning: %s\n", w.c_str());
  if (show_config) std::printf("config:\n%s", cfg.to_text().c_str());
  if (filters) {
    const BlurFilter f = make_blur_filter(cfg.blur_n);
    Scalar total = 0;
    for (Scalar t : f.taps) total += t;
    const auto denom = static_cast<long long>(total * total);
    std::printf("blur filter n=%zu (x1/%lld):\n", f.n, denom);
    for (std::size_t r = 0; r < f.m; ++r) {
      std::printf(" ");
      for (std::size_t q = 0; q < f.m; ++q) std::printf(" %lld", static_cast<long long>(f.taps[r] * f.taps[q]));
      std::printf("\n");
    }
  }
  return 0;
}

int cmd_gradcheck(const Common& c, bool inject_fault) {
  resolve(c);
  bool ok = true;
  for (const auto& b : run_gradcheck_suite(c.seed, inject_fault)) {
    std::printf("%-24s %s  max_rel_err=%.3e  tol=%.0e  checked=%zu  worst=%s[%zu]\n", b.name.c_str(),
                b.report.passed ? "PASS" : "FAIL", static_cast<double>(b.report.max_relative_error),
                static_cast<double>(b.tolerance), b.report.checked, b.report.worst_target.c_str(),
                b.report.worst_parameter_index);
    ok = ok && b.report.passed;
  }
  return ok ? 0 : 2;
}

int cmd_train(const Common& c, TrainOptions opt) {
  const NetworkConfig cfg = resolve(c);
  const fs::path dir = out_dir(c);
  opt.seed = c.seed;
  opt.log_csv = dir / "train_log.csv";
  opt.checkpoint = dir / "weights.aapw";
  Network net(cfg);
  const TrainState st = train_toy(net, opt);
  std::printf("epochs=%zu steps=%zu loss=%.6e train_epe=%.4f px\n", st.epoch, st.step, st.loss, st.train_epe);
  std::printf("log: %s\nweights: %s\n", opt.log_csv.string().c_str(), opt.checkpoint.string().c_str());
  return 0;
}

void print_metrics(const char* label, const MetricSet& m) {
  std::printf("%-9s AUC=%.6f  EPE mean=%.4f median=%.4f px\n", label, m.pck_auc, m.epe.mean, m.epe.median);
}

int cmd_eval(const Common& c, const std::string& records, const std::string& pred, const std::string& gt) {
  std::vector<EvalRecord> recs;
  if (!records.empty()) {
    recs = read_records(records);
  } else if (!pred.empty() && !gt.empty()) {
    recs = read_record_pair(pred, gt);
  } else {
    throw ConfigError("eval: give --records, or both --pred and --gt");
  }
  const fs::path dir = out_dir(c);
  const MetricSet m = evaluate(recs);
  std::printf("records=%zu\n", recs.size());
  print_metrics("metrics", m);
  write_curve_csv(dir / "pck.csv", pck_thresholds(), m.pck);
  bool scaled = true;
  for (const auto& r : recs) scaled = scaled && r.norm_scale.has_value();
  if (scaled) {
    const auto t = pckh_thresholds();
    const auto curve = pckh_curve(recs, t);
    std::printf("PCKh AUC=%.6f\n", auc(curve, t));
    write_curve_csv(dir / "pckh.csv", t, curve);
  }
  return 0;
}

int cmd_shift(const Common& c, const std::string& weights, int max_shift, std::size_t images, bool train_data) {
  const NetworkConfig cfg = resolve(c);
  Network net = weights.empty() ? build_network(cfg, c.seed) : load_weights(weights, cfg);
  const auto data = synth_dataset(images, cfg.input_height, train_data ? c.seed : c.seed + 1);
  const ShiftReport r = shift_robustness(
      [&](const Tensor& x) { return net.predict(x).front(); }, data, max_shift, c.seed);
  std::printf("samples=%zu skipped=%zu max_shift=%d\n", r.evaluated, r.skipped, max_shift);
  print_metrics("baseline", r.baseline);
  print_metrics("shifted", r.shifted);
  std::printf("degradation: EPE %+.4f px  AUC %+.6f\n", r.epe_degradation, r.auc_degradation);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-augmented, anti-aliased hand keypoint regression toolkit"};
  app.require_subcommand(1);

  Common c;
  bool filters = false;
  bool show_config = false;
  auto* summary = app.add_subcommand("summary", "Print the per-layer architecture table");
  add_common(summary, c, "default");
  summary->add_flag("--filters", filters, "Also print the blur filter");
  summary->add_flag("--show-config", show_config, "Also print the resolved config");

  Common g;
  bool inject = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every block");
  add_common(gradcheck, g, "gradcheck");
  gradcheck->add_flag("--inject-fault", inject, "Corrupt one analytic gradient entry");

  Common t;
  TrainOptions opt;
  double fixed_lr = -1;
  auto* train = app.add_subcommand("train-toy", "Train the tiny network on synthetic hands");
  add_common(train, t, "tiny");
  train->add_option("--images", opt.n_images, "Synthetic training images")->capture_default_str();
  train->add_option("--epochs", opt.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch", opt.batch_size, "Batch size")->capture_default_str();
  train->add_option("--momentum", opt.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--lr", fixed_lr, "Fixed learning rate instead of the cyclical schedule");
  train->add_option("--stepsize", opt.schedule.stepsize, "Cyclical stepsize in epochs")->capture_default_str();
  train->add_option("--checkpoint-every", opt.checkpoint_every, "Checkpoint interval in epochs");

  Common e;
  std::string records, pred, gt;
  auto* eval = app.add_subcommand("eval", "EPE, PCK, PCKh and AUC from record files");
  add_common(eval, e, "default");
  eval->add_option("--records", records, "Combined prediction + ground-truth file")->check(CLI::ExistingFile);
  eval->add_option("--pred", pred, "Prediction file")->check(CLI::ExistingFile);
  eval->add_option("--gt", gt, "Ground-truth file")->check(CLI::ExistingFile);

  Common s;
  std::string weights;
  int max_shift = 6;
  std::size_t images = 32;
  bool train_data = false;
  auto* shift_cmd = app.add_subcommand("shift-test", "Metric degradation under random input shifts");
  add_common(shift_cmd, s, "tiny");
  shift_cmd->add_option("--weights", weights, "Trained weights file")->check(CLI::ExistingFile);
  shift_cmd->add_option("--max-shift", max_shift, "Maximum shift in pixels per axis")->capture_default_str();
  shift_cmd->add_option("--images", images, "Synthetic evaluation images")->capture_default_str();
  shift_cmd->add_flag("--train-data", train_data, "Evaluate on the training images for --seed instead of held-out ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (*summary) return cmd_summary(c, filters, show_config);
    if (*gradcheck) return cmd_gradcheck(g, inject);
    if (*train) {
      if (fixed_lr >= 0) opt.fixed_lr = fixed_lr;
      return cmd_train(t, opt);
    }
    if (*eval) return cmd_eval(e, records, pred, gt);
    if (*shift_cmd) return cmd_shift(s, weights, max_shift, images, train_data);
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
