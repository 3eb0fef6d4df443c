#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aapt/network.hpp"

namespace aapt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects on/off, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_size(key, item));
  }
  return out;
}

std::string list_text(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string double_text(double d) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", d);
  return buf.data();
}

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::blur: return "blur";
    case Pooling::average: return "average";
    case Pooling::max: return "max";
  }
  return "?";
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void NetworkConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ConfigError("config: input dimensions must be positive");
  }
  if (blocks.empty()) throw ConfigError("config: need at least one dense block");
  for (std::size_t b : blocks) {
    if (b == 0) throw ConfigError("config: dense blocks need at least one layer");
  }
  if (transitions.size() + 1 != blocks.size()) {
    throw ConfigError("config: " + std::to_string(blocks.size()) + " dense blocks need " +
                      std::to_string(blocks.size() - 1) + " transitions, got " +
                      std::to_string(transitions.size()));
  }
  for (std::size_t t : transitions) {
    if (t == 0) throw ConfigError("config: transition width must be positive");
  }
  if (attention_from == 0) throw ConfigError("config: attention_from is 1-based");
  if (blur_n == 0) throw ConfigError("config: blur_n must be >= 1");
  block_config(attention).validate();
  std::size_t h = input_height, w = input_width;
  for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  if (h != w) {
    throw ConfigError("config: final feature map " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be square for the pooled head");
  }
}

std::vector<std::size_t> NetworkConfig::spatial_trace() const {
  std::vector<std::size_t> trace{input_height};
  std::size_t h = input_height;
  for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
    h = (h + 1) / 2;
    trace.push_back(h);
  }
  trace.push_back(1);
  return trace;
}

BlockConfig NetworkConfig::block_config(bool with_attention) const {
  BlockConfig b;
  b.expansion = expansion;
  b.growth = growth;
  b.activation = activation;
  b.attention = with_attention;
  b.ratios = ratios;
  b.expand_from = expand_from;
  b.bias = bias;
  b.aac_kernel = aac_kernel;
  return b;
}

std::string NetworkConfig::to_text() const {
  std::string s;
  auto line = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  line("input_height", std::to_string(input_height));
  line("input_width", std::to_string(input_width));
  line("input_channels", std::to_string(input_channels));
  line("blocks", list_text(blocks));
  line("transitions", list_text(transitions));
  line("attention", attention ? "on" : "off");
  line("attention_from", std::to_string(attention_from));
  line("pooling", pooling_name(pooling));
  line("activation", activation == Activation::mish ? "mish" : "relu");
  line("growth", std::to_string(growth));
  line("expansion", std::to_string(expansion));
  line("expand_from", expand_from == ExpansionBase::growth ? "growth" : "input");
  line("heads", std::to_string(ratios.heads));
  line("kappa", double_text(ratios.kappa));
  line("u", double_text(ratios.u));
  line("blur_n", std::to_string(blur_n));
  line("aac_kernel", std::to_string(aac_kernel));
  line("bias", bias ? "on" : "off");
  line("attention_budget", std::to_string(attention_budget));
  return s;
}

NetworkConfig NetworkConfig::parse(const std::string& text) { return parse(text, NetworkConfig{}); }

NetworkConfig NetworkConfig::parse(const std::string& text, NetworkConfig c) {
  std::stringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string l = trim(raw.substr(0, raw.find('#')));
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string k = trim(l.substr(0, eq));
    const std::string v = trim(l.substr(eq + 1));
    if (k == "input_height") c.input_height = to_size(k, v);
    else if (k == "input_width") c.input_width = to_size(k, v);
    else if (k == "input_channels") c.input_channels = to_size(k, v);
    else if (k == "blocks") c.blocks = to_list(k, v);
    else if (k == "transitions") c.transitions = to_list(k, v);
    else if (k == "attention") c.attention = to_bool(k, v);
    else if (k == "attention_from") c.attention_from = to_size(k, v);
    else if (k == "pooling") {
      if (v == "blur") c.pooling = Pooling::blur;
      else if (v == "average" || v == "avg") c.pooling = Pooling::average;
      else if (v == "max") c.pooling = Pooling::max;
      else throw ConfigError("config: unknown pooling '" + v + "'");
    } else if (k == "activation") {
      if (v == "mish") c.activation = Activation::mish;
      else if (v == "relu") c.activation = Activation::relu;
      else throw ConfigError("config: unknown activation '" + v + "'");
    } else if (k == "growth") c.growth = to_size(k, v);
    else if (k == "expansion") c.expansion = to_size(k, v);
    else if (k == "expand_from") {
      if (v == "growth") c.expand_from = ExpansionBase::growth;
      else if (v == "input") c.expand_from = ExpansionBase::input;
      else throw ConfigError("config: expand_from must be growth or input");
    } else if (k == "heads") c.ratios.heads = to_size(k, v);
    else if (k == "kappa") c.ratios.kappa = to_double(k, v);
    else if (k == "u") c.ratios.u = to_double(k, v);
    else if (k == "blur_n") c.blur_n = to_size(k, v);
    else if (k == "aac_kernel") c.aac_kernel = to_size(k, v);
    else if (k == "bias") c.bias = to_bool(k, v);
    else if (k == "attention_budget") c.attention_budget = to_size(k, v);
    else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

NetworkConfig NetworkConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t NetworkConfig::hash() const { return fnv1a64(to_text()); }

NetworkConfig NetworkConfig::ablation(int arch) { return ablation(arch, NetworkConfig{}); }

NetworkConfig NetworkConfig::ablation(int arch, NetworkConfig c) {
  struct Row {
    bool attention;
    Pooling pooling;
    Activation activation;
  };
  using enum Pooling;
  constexpr auto mish = Activation::mish, relu = Activation::relu;
  static constexpr std::array<Row, 12> rows{{
      {true, blur, mish},     {false, blur, mish},   {false, average, mish}, {true, average, mish},
      {true, blur, relu},     {false, average, relu}, {true, average, relu}, {false, blur, relu},
      {false, max, mish},     {true, max, mish},     {false, max, relu},     {true, max, relu},
  }};
  if (arch < 1 || arch > 12) throw ConfigError("ablation architecture must be 1..12");
  const Row& r = rows[static_cast<std::size_t>(arch - 1)];
  c.attention = r.attention;
  c.pooling = r.pooling;
  c.activation = r.activation;
  return c;
}

NetworkConfig NetworkConfig::preset(const std::string& name) {
  if (name == "default") return NetworkConfig{};
  if (name == "tiny") {
    NetworkConfig c;
    c.input_height = c.input_width = 32;
    c.blocks = {2, 2, 2};
    c.transitions = {16, 16};
    c.attention_from = 3;
    return c;
  }
  if (name == "gradcheck") {
    NetworkConfig c;
    c.input_height = c.input_width = 16;
    c.blocks = {1, 1};
    c.transitions = {8};
    c.attention_from = 2;
    c.growth = 4;
    c.expansion = 4;
    return c;
  }
  if (name.rfind("arch", 0) == 0) {
    const std::string num = name.substr(4);
    int arch = 0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), arch);
    if (ec == std::errc() && ptr == num.data() + num.size()) return ablation(arch);
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace aapt
