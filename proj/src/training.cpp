#include "aapt/training.hpp"

#include <cmath>
#include <fstream>

#include "aapt/metrics.hpp"

namespace aapt {

double cyclical_lr(double t, const LRSchedule& s) {
  if (t < 0) throw ConfigError("cyclical_lr: t must be >= 0");
  if (!(s.stepsize > 0)) throw ConfigError("cyclical_lr: stepsize must be positive");
  // Position within the current cycle.
  const double phase = std::fmod(t, 2 * s.stepsize);
  const double x = std::abs(phase / s.stepsize - 1);
  return s.lr_min + (s.lr_max - s.lr_min) * std::max(0.0, 1 - x);
}

double coordinate_loss(const Tensor& pred, const Tensor& gt, LossKind kind, Tensor* grad) {
  require_same_shape(pred.shape(), gt.shape(), "coordinate_loss");
  const auto n = static_cast<double>(pred.size());
  double total = 0;
  if (grad) *grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    if (!std::isfinite(d)) throw NumericError("coordinate_loss: non-finite input at index " + std::to_string(i));
    if (kind == LossKind::mse) {
      total += d * d;
      if (grad) (*grad)[i] = static_cast<Scalar>(2 * d / n);
    } else {
      total += std::abs(d);
      if (grad) (*grad)[i] = static_cast<Scalar>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
    }
  }
  return total / n;
}

double coordinate_loss(const KeypointSet& pred, const KeypointSet& gt, LossKind kind) {
  Tensor a(Shape{1, 1, 1, kNumOutputs}), b(Shape{1, 1, 1, kNumOutputs});
  encode_keypoints(pred, 1, 1, a, 0);
  encode_keypoints(gt, 1, 1, b, 0);
  return coordinate_loss(a, b, kind);
}

namespace {

void check_finite(const ParamRef& p) {
  if (!all_finite(p.grad)) throw NumericError("non-finite gradient in " + p.name);
}

}  // namespace

void sgd_step(std::vector<ParamRef>& params, double lr) {
  for (const auto& p : params) {
    if (p.trainable()) check_finite(p);
  }
  const auto step = static_cast<Scalar>(lr);
  for (auto& p : params) {
    if (!p.trainable()) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= step * p.grad[i];
  }
}

void Sgd::step(std::vector<ParamRef>& params, double lr) {
  if (momentum_ == 0) {
    sgd_step(params, lr);
    return;
  }
  for (const auto& p : params) {
    if (p.trainable()) check_finite(p);
  }
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i].grad.size(), 0);
  }
  const auto m = static_cast<Scalar>(momentum_);
  const auto step = static_cast<Scalar>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.trainable()) continue;
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] = m * v[i] + p.grad[i];
      p.value[i] -= step * v[i];
    }
  }
}

std::vector<Sample> synth_dataset(std::size_t n, std::size_t image_size, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(synth_hand(seed * 1000003ULL + i, image_size));
  }
  return out;
}

double mean_epe(Network& net, const std::vector<Sample>& data) {
  std::vector<EvalRecord> records;
  for (const auto& s : data) {
    records.push_back(EvalRecord{"", net.predict(s.image).front(), s.keypoints, std::nullopt});
  }
  return epe(records).mean;
}

TrainState train(Network& net, const std::vector<Sample>& data, const TrainOptions& opt) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (opt.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  const NetworkConfig& cfg = net.config();
  const Shape img = data.front().image.shape();
  const std::size_t batches = (data.size() + opt.batch_size - 1) / opt.batch_size;

  std::ofstream log;
  if (!opt.log_csv.empty()) {
    log.open(opt.log_csv);
    if (!log) throw ConfigError("cannot write " + opt.log_csv.string());
    log << "epoch,lr,loss,train_epe\n";
    log.precision(10);
  }

  Sgd sgd(opt.momentum);
  TrainState st;
  st.seed = opt.seed;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0;
    double lr = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * opt.batch_size;
      const std::size_t count = std::min(opt.batch_size, data.size() - begin);
      Tensor x(Shape{count, img.h, img.w, img.c});
      Tensor y(Shape{count, 1, 1, kNumOutputs});
      for (std::size_t i = 0; i < count; ++i) {
        const Sample& s = data[begin + i];
        std::copy(s.image.values().begin(), s.image.values().end(),
                  x.values().begin() + static_cast<std::ptrdiff_t>(i * img.h * img.w * img.c));
        encode_keypoints(s.keypoints, cfg.input_height, cfg.input_width, y, i);
      }
      net.zero_grad();
      const Tensor out = net.forward(x, Mode::train);
      Tensor grad;
      const double loss = coordinate_loss(out, y, opt.loss, &grad);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b));
      }
      net.backward(grad);
      const double t = static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches);
      lr = opt.fixed_lr ? *opt.fixed_lr : cyclical_lr(t, opt.schedule);
      auto ps = net.params();
      sgd.step(ps, lr);
      loss_sum += loss;
      ++st.step;
    }
    st.epoch = epoch + 1;
    st.loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(st.loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    st.train_epe = mean_epe(net, data);
    st.log.push_back(EpochLog{st.epoch, lr, st.loss, st.train_epe});
    if (log) log << st.epoch << ',' << lr << ',' << st.loss << ',' << st.train_epe << '\n';
    if (!opt.checkpoint.empty() && opt.checkpoint_every > 0 && st.epoch % opt.checkpoint_every == 0) {
      save_weights(net, opt.checkpoint);
    }
  }
  if (!opt.checkpoint.empty()) save_weights(net, opt.checkpoint);
  return st;
}

TrainState train_toy(Network& net, const TrainOptions& opt) {
  const NetworkConfig& cfg = net.config();
  if (cfg.input_height != cfg.input_width || cfg.input_channels != 3) {
    throw ConfigError("train_toy: needs a square 3-channel input");
  }
  net.initialize(opt.seed);
  return train(net, synth_dataset(opt.n_images, cfg.input_height, opt.seed), opt);
}

}  // namespace aapt
