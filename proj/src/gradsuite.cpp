#include "aapt/gradsuite.hpp"

#include <cmath>
#include <memory>

#include "aapt/blocks.hpp"
#include "aapt/network.hpp"
#include "aapt/rng.hpp"
#include "aapt/training.hpp"

namespace aapt {

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(-scale, scale));
  return t;
}

void zero(std::vector<ParamRef>& ps) {
  for (auto& p : ps) std::fill(p.grad.begin(), p.grad.end(), Scalar{0});
}

GradCheckReport check(const std::function<Scalar()>& objective, std::vector<ParamRef>& params,
                      Tensor* input, const Tensor* dx, const GradCheckOptions& options, bool inject_fault) {
  std::vector<std::string> names;
  std::vector<std::span<Scalar>> values;
  std::vector<std::vector<Scalar>> analytic;
  if (input) {
    names.push_back("input");
    values.push_back(input->values());
    analytic.emplace_back(dx->values().begin(), dx->values().end());
  }
  for (auto& p : params) {
    if (!p.trainable()) continue;
    names.push_back(p.name);
    values.push_back(p.value);
    analytic.emplace_back(p.grad.begin(), p.grad.end());
  }
  std::vector<GradTarget> targets;
  for (std::size_t i = 0; i < names.size(); ++i) targets.push_back(GradTarget{names[i], values[i], analytic[i]});
  if (inject_fault) {
    // One perturbed entry, also exposed as its own target so sampling cannot skip it.
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      if (analytic[i].empty()) continue;
      const std::size_t k = analytic[i].size() / 2;
      analytic[i][k] += static_cast<Scalar>(0.01) * std::max<Scalar>(1, std::abs(analytic[i][k]));
      targets.push_back(GradTarget{names[i] + "[fault]", values[i].subspan(k, 1),
                                   std::span<const Scalar>(analytic[i]).subspan(k, 1)});
      break;
    }
  }
  return grad_check(objective, targets, options);
}

}  // namespace

GradCheckReport check_layer(Layer& layer, const Tensor& x0, std::uint64_t seed,
                            const GradCheckOptions& options, bool inject_fault) {
  Rng rng(seed);
  Tensor x = x0;
  const Tensor r = random_tensor(layer.output_shape(x.shape()), rng);
  std::vector<ParamRef> params;
  layer.collect_params("", params);
  zero(params);
  layer.forward(x, Mode::train);
  const Tensor dx = layer.backward(r);
  auto objective = [&]() { return dot(layer.forward(x, Mode::train), r); };
  return check(objective, params, &x, &dx, options, inject_fault);
}

std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed, bool inject_fault) {
  if (!kDoublePrecision) throw ConfigError("gradient checks need a 64-bit build");
  std::vector<BlockCheck> out;
  Rng rng(seed);
  GradCheckOptions block_opts;
  block_opts.seed = seed;

  BlockConfig bc;
  bc.growth = 4;
  bc.expansion = 2;
  bc.ratios.heads = 2;
  const Shape in{1, 4, 4, 6};

  auto run = [&](const std::string& name, Layer& layer, const Shape& shape, Scalar tol) {
    GradCheckOptions o = block_opts;
    o.tolerance = tol;
    const Tensor x = random_tensor(shape, rng);
    out.push_back(BlockCheck{name, check_layer(layer, x, rng.next(), o, inject_fault), tol});
  };

  {
    InvertedBottleneck l(in.c, bc);
    l.init(rng);
    run("inverted_bottleneck", l, in, 1e-5);
  }
  {
    BlockConfig c = bc;
    c.attention = true;
    AAInvertedBottleneck l(in.c, in.h, in.w, c);
    l.init(rng);
    run("aa_inverted_bottleneck", l, in, 1e-5);
  }
  {
    BlockConfig c = bc;
    c.attention = true;
    DenseBlock l(in.c, 2, in.h, in.w, c);
    l.init(rng);
    run("dense_block", l, in, 1e-5);
  }
  for (auto [pool, label] : {std::pair{Pooling::blur, "blur"}, std::pair{Pooling::average, "average"},
                             std::pair{Pooling::max, "max"}}) {
    TransitionLayer l(in.c, 3, pool);
    l.init(rng);
    run(std::string("transition_") + label, l, Shape{2, 4, 4, 6}, 1e-5);
  }
  {
    RegressionHead l(in.c, 2, kNumOutputs);
    l.init(rng);
    run("head", l, Shape{2, 2, 2, 6}, 1e-5);
  }
  {
    Network net(NetworkConfig::preset("gradcheck"));
    net.initialize(rng.next());
    const NetworkConfig& cfg = net.config();
    Tensor x = random_tensor(Shape{2, cfg.input_height, cfg.input_width, cfg.input_channels}, rng);
    const Tensor y = random_tensor(Shape{2, 1, 1, kNumOutputs}, rng);
    auto params = net.params();
    net.zero_grad();
    Tensor dloss;
    coordinate_loss(net.forward(x, Mode::train), y, LossKind::mse, &dloss);
    const Tensor dx = net.backward(dloss);
    auto objective = [&]() {
      return static_cast<Scalar>(coordinate_loss(net.forward(x, Mode::train), y));
    };
    GradCheckOptions o = block_opts;
    o.tolerance = 1e-4;
    o.max_entries_per_target = 24;
    out.push_back(BlockCheck{"network_end_to_end", check(objective, params, &x, &dx, o, inject_fault), 1e-4});
  }
  return out;
}

}  // namespace aapt
