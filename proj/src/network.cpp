#include "aapt/network.hpp"

#include <fstream>
#include <map>

#include "aapt/rng.hpp"
#include "aapt/serialize.hpp"

namespace aapt {

namespace {

constexpr char kWeightsMagic[4] = {'A', 'A', 'P', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

void init_layer(Layer& l, Rng& rng) {
  if (auto* d = dynamic_cast<DenseBlock*>(&l)) d->init(rng);
  else if (auto* t = dynamic_cast<TransitionLayer*>(&l)) t->init(rng);
  else if (auto* h = dynamic_cast<RegressionHead*>(&l)) h->init(rng);
}

Shape input_shape(const NetworkConfig& c, std::size_t n = 1) {
  return Shape{n, c.input_height, c.input_width, c.input_channels};
}

}  // namespace

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t c = cfg_.input_channels;
  std::size_t h = cfg_.input_height, w = cfg_.input_width;
  auto attention_at = [&](std::size_t block_index) {
    if (!cfg_.attention || block_index < cfg_.attention_from) return false;
    if (h * w > cfg_.attention_budget) {
      warnings_.push_back("attention over " + std::to_string(h) + "x" + std::to_string(w) +
                          " positions exceeds the budget of " + std::to_string(cfg_.attention_budget));
    }
    return true;
  };
  for (std::size_t b = 0; b < cfg_.blocks.size(); ++b) {
    const BlockConfig bc = cfg_.block_config(attention_at(b + 1));
    layers_.push_back({"dense" + std::to_string(b + 1),
                       std::make_unique<DenseBlock>(c, cfg_.blocks[b], h, w, bc)});
    c += cfg_.blocks[b] * cfg_.growth;
    if (b + 1 < cfg_.blocks.size()) {
      layers_.push_back({"transition" + std::to_string(b + 1),
                         std::make_unique<TransitionLayer>(c, cfg_.transitions[b], cfg_.pooling,
                                                           cfg_.blur_n)});
      c = cfg_.transitions[b];
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
  }
  const BlockConfig last = cfg_.block_config(cfg_.attention);
  layers_.push_back({"aa_bottleneck", std::make_unique<DenseBlock>(c, 1, h, w, last)});
  c += cfg_.growth;
  layers_.push_back({"head", std::make_unique<RegressionHead>(c, h, kNumOutputs)});
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : layers_) init_layer(*e.layer, rng);
}

Tensor Network::forward(const Tensor& x, Mode mode) {
  const Shape& s = x.shape();
  if (s.h != cfg_.input_height || s.w != cfg_.input_width || s.c != cfg_.input_channels) {
    throw ShapeError("network: expects N x " + std::to_string(cfg_.input_height) + " x " +
                     std::to_string(cfg_.input_width) + " x " + std::to_string(cfg_.input_channels) +
                     " input, got " + s.str());
  }
  Tensor y = x;
  for (auto& e : layers_) y = e.layer->forward(y, mode);
  return y;
}

Tensor Network::backward(const Tensor& dy) {
  Tensor g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i].layer->backward(g);
  return g;
}

std::vector<KeypointSet> Network::predict(const Tensor& x) {
  const Tensor out = forward(x, Mode::infer);
  std::vector<KeypointSet> sets;
  for (std::size_t n = 0; n < out.shape().n; ++n) {
    sets.push_back(decode_keypoints(out, n, cfg_.input_height, cfg_.input_width));
  }
  return sets;
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  for (auto& e : layers_) e.layer->collect_params(e.name, out);
  return out;
}

void Network::zero_grad() {
  for (auto& p : params()) std::fill(p.grad.begin(), p.grad.end(), Scalar{0});
}

std::vector<LayerStat> Network::layer_stats() const {
  std::vector<LayerStat> out;
  Shape s = input_shape(cfg_);
  for (const auto& e : layers_) {
    e.layer->report(e.name, s, out);
    s = e.layer->output_shape(s);
  }
  return out;
}

Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  Network net(cfg);
  net.initialize(seed);
  return net;
}

KeypointSet decode_keypoints(const Tensor& out, std::size_t n, std::size_t height, std::size_t width) {
  if (out.shape().c != kNumOutputs || out.shape().h != 1 || out.shape().w != 1 || n >= out.shape().n) {
    throw ShapeError("decode_keypoints: expects N x 1 x 1 x 42, got " + out.shape().str());
  }
  KeypointSet k;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    k.points[i].x = static_cast<double>(out.at(n, 0, 0, 2 * i)) * static_cast<double>(width);
    k.points[i].y = static_cast<double>(out.at(n, 0, 0, 2 * i + 1)) * static_cast<double>(height);
  }
  return k;
}

void encode_keypoints(const KeypointSet& k, std::size_t height, std::size_t width, Tensor& out,
                      std::size_t n) {
  if (out.shape().c != kNumOutputs || out.shape().h != 1 || out.shape().w != 1 || n >= out.shape().n) {
    throw ShapeError("encode_keypoints: expects N x 1 x 1 x 42, got " + out.shape().str());
  }
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    out.at(n, 0, 0, 2 * i) = static_cast<Scalar>(k.points[i].x / static_cast<double>(width));
    out.at(n, 0, 0, 2 * i + 1) = static_cast<Scalar>(k.points[i].y / static_cast<double>(height));
  }
}

ParamReport count_params(const Network& net) {
  ParamReport r;
  r.items = net.layer_stats();
  for (const auto& s : r.items) r.total += s.params;
  return r;
}

FlopReport count_flops(const Network& net, const Shape& input) {
  const NetworkConfig& c = net.config();
  if (input.h != c.input_height || input.w != c.input_width || input.c != c.input_channels) {
    throw ShapeError("count_flops: network expects " + input_shape(c).str() + ", got " + input.str());
  }
  FlopReport r;
  r.items = net.layer_stats();
  for (auto& s : r.items) {
    s.macs *= input.n;
    s.output.n = input.n;
    r.total_macs += s.macs;
  }
  r.total_flops = 2 * r.total_macs;
  return r;
}

void save_weights(Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string text = net.config().to_text();
  out.write(kWeightsMagic, 4);
  write_u32(out, kWeightsVersion);
  write_u64(out, fnv1a64(text));
  write_u64(out, text.size());
  write_bytes(out, text);
  const auto ps = net.params();
  write_u64(out, ps.size());
  for (const auto& p : ps) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    write_bytes(out, p.name);
    Tensor t(p.shape, std::vector<Scalar>(p.value.begin(), p.value.end()));
    write_tensor(out, t);
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Network load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string magic = read_bytes(in, 4);
  if (magic != std::string(kWeightsMagic, 4)) throw FormatError(path.string() + ": not a weights file");
  const std::uint32_t version = read_u32(in);
  if (version != kWeightsVersion) {
    throw FormatError(path.string() + ": unsupported weights version " + std::to_string(version));
  }
  const std::uint64_t stored_hash = read_u64(in);
  const std::uint64_t len = read_u64(in);
  if (len > (1u << 20)) throw FormatError(path.string() + ": config text too long");
  const std::string text = read_bytes(in, len);
  if (fnv1a64(text) != stored_hash) throw FormatError(path.string() + ": config hash mismatch");
  NetworkConfig cfg;
  try {
    cfg = NetworkConfig::parse(text);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad embedded config: " + e.what());
  }
  Network net(cfg);
  std::map<std::string, ParamRef> by_name;
  for (auto& p : net.params()) by_name.emplace(p.name, p);
  const std::uint64_t count = read_u64(in);
  if (count != by_name.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(by_name.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    if (name_len > 4096) throw FormatError(path.string() + ": tensor name too long");
    const std::string name = read_bytes(in, name_len);
    const Tensor t = read_tensor(in);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
    if (!(t.shape() == it->second.shape)) {
      throw FormatError(path.string() + ": tensor '" + name + "' has shape " + t.shape().str() +
                        ", expected " + it->second.shape.str());
    }
    std::copy(t.values().begin(), t.values().end(), it->second.value.begin());
    by_name.erase(it);
  }
  return net;
}

Network load_weights(const std::filesystem::path& path, const NetworkConfig& expected) {
  Network net = load_weights(path);
  if (net.config().hash() != expected.hash()) {
    throw FormatError(path.string() + ": weights were saved for a different configuration");
  }
  return net;
}

}  // namespace aapt
