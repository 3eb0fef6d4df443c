#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aapt/keypoints.hpp"
#include "aapt/layers.hpp"
#include "aapt/network.hpp"
#include "aapt/synth.hpp"

namespace aapt {

/// Triangular cyclical learning rate; t and stepsize share a unit (epochs in
/// the toy loop, fractional within an epoch).
struct LRSchedule {
  double lr_min = 1e-4;
  double lr_max = 1e-1;
  double stepsize = 6;
};

double cyclical_lr(double t, const LRSchedule& s);

enum class LossKind { mse, mae };

/// Mean over all coordinates of two equally shaped normalized-coordinate
/// tensors. Writes d(loss)/d(pred) into `grad` when given.
double coordinate_loss(const Tensor& pred, const Tensor& gt, LossKind kind = LossKind::mse,
                       Tensor* grad = nullptr);
/// Same loss on one pair of keypoint sets already in normalized units.
double coordinate_loss(const KeypointSet& pred, const KeypointSet& gt, LossKind kind = LossKind::mse);

/// w <- w - lr * g for every trainable parameter (plain SGD).
void sgd_step(std::vector<ParamRef>& params, double lr);

/// SGD with optional heavy-ball momentum: v <- m*v + g; w <- w - lr*v.
class Sgd {
 public:
  explicit Sgd(double momentum = 0) : momentum_(momentum) {}
  void step(std::vector<ParamRef>& params, double lr);

 private:
  double momentum_;
  std::vector<std::vector<Scalar>> velocity_;
};

struct TrainOptions {
  std::size_t n_images = 32;
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  std::uint64_t seed = 42;
  LRSchedule schedule;
  std::optional<double> fixed_lr;  // overrides the schedule
  LossKind loss = LossKind::mse;
  double momentum = 0;
  std::filesystem::path log_csv;         // empty: no log file
  std::filesystem::path checkpoint;      // empty: no checkpoints
  std::size_t checkpoint_every = 0;      // epochs; 0 writes only the final weights
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;       // mean training-mode batch loss
  double train_epe = 0;  // infer-mode mean EPE over the training set, pixels
};

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  std::uint64_t seed = 0;
  double train_epe = 0;
  std::vector<EpochLog> log;
};

/// Images for synthetic training set index i use seed (seed, i).
std::vector<Sample> synth_dataset(std::size_t n, std::size_t image_size, std::uint64_t seed);

/// Mean EPE in pixels of net.predict over `data`.
double mean_epe(Network& net, const std::vector<Sample>& data);

/// Synthetic data -> forward -> loss -> backward -> SGD on the cyclical
/// schedule. Batches follow dataset order. Throws NumericError on divergence.
TrainState train(Network& net, const std::vector<Sample>& data, const TrainOptions& opt);
/// train() on synth_dataset(opt.n_images, ...) for a freshly seeded network.
TrainState train_toy(Network& net, const TrainOptions& opt);

}  // namespace aapt
