#include "spurscan/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "spurscan/error.hpp"

namespace spurscan {

namespace {

using json = nlohmann::ordered_json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride) {
  return len < kernel ? 0 : (len - kernel) / stride + 1;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void require_cache(const ModelConfig& cfg, const WeightStore& weights, const ForwardCache& cache) {
  if (!cache.valid() || cache.weights != &weights || !(cache.cfg == cfg)) {
    throw Error(ErrorCode::StaleCache, "forward cache was not produced by this model");
  }
}

// Position-major valid convolution: in [len_in, c_in], w [c_out, k, c_in].
template <typename T>
Activation conv1d(std::span<const T> in, std::size_t c_in, const Tensor& w, const Tensor& bias,
                  std::size_t stride) {
  const std::size_t len_in = in.size() / c_in;
  const std::size_t c_out = w.dim(0), k = w.dim(1);
  const std::size_t span_len = k * c_in;
  Activation out;
  out.len = conv_out_len(len_in, k, stride);
  out.channels = c_out;
  out.data.resize(out.len * c_out);
  for (std::size_t t = 0; t < out.len; ++t) {
    const auto field = in.subspan(t * stride * c_in, span_len);
    for (std::size_t c = 0; c < c_out; ++c) {
      std::span<const float> filt(w.data.data() + c * span_len, span_len);
      out.data[t * c_out + c] = bias.data[c] + dot(filt, field);
    }
  }
  return out;
}

// Backward of conv1d for a sparse upstream gradient d_out [len_out * c_out].
template <typename T>
void conv1d_backward(std::span<const T> in, std::size_t c_in, const Tensor& w, std::size_t stride,
                     std::span<const double> d_out, std::vector<double>& d_w, std::vector<double>& d_b,
                     std::vector<double>& d_in) {
  const std::size_t c_out = w.dim(0), k = w.dim(1);
  const std::size_t span_len = k * c_in;
  const std::size_t len_out = d_out.size() / c_out;
  for (std::size_t t = 0; t < len_out; ++t) {
    const std::size_t base = t * stride * c_in;
    for (std::size_t c = 0; c < c_out; ++c) {
      const double g = d_out[t * c_out + c];
      if (g == 0.0) continue;
      d_b[c] += g;
      const T* field = in.data() + base;
      const float* filt = w.data.data() + c * span_len;
      double* dw = d_w.data() + c * span_len;
      double* di = d_in.data() + base;
      for (std::size_t j = 0; j < span_len; ++j) {
        dw[j] += g * field[j];
        di[j] += g * filt[j];
      }
    }
  }
}

Tensor to_tensor(const Shape& shape, const std::vector<double>& values) {
  Tensor t(shape);
  for (std::size_t i = 0; i < values.size(); ++i) t.data[i] = static_cast<float>(values[i]);
  return t;
}

void head_forward(const ModelConfig& cfg, const WeightStore& weights, ForwardCache& cache,
                  ModelOutput& out) {
  const Tensor& w = weights.at("fc.weight");
  const Tensor& b = weights.at("fc.bias");
  const std::size_t n_out = cfg.n_outputs(), n_in = cache.features.size();
  out.logits.assign(n_out, 0.0);
  for (std::size_t j = 0; j < n_out; ++j) {
    double z = b.data[j];
    for (std::size_t c = 0; c < n_in; ++c) z += static_cast<double>(w.data[j * n_in + c]) * cache.features[c];
    out.logits[j] = z;
  }
  for (double z : out.logits) {
    if (!std::isfinite(z)) throw Error(ErrorCode::NonFinite, "non-finite logit");
  }
  if (cfg.output == OutputKind::Softmax2) {
    const double m = std::max(out.logits[0], out.logits[1]);
    const double e0 = std::exp(out.logits[0] - m), e1 = std::exp(out.logits[1] - m);
    out.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    out.malware_score = out.probs[1];
    out.malware_logit = out.logits[1] - out.logits[0];
  } else {
    const double s = sigmoid(out.logits[0]);
    out.probs = {s};
    out.malware_score = s;
    out.malware_logit = out.logits[0];
  }
  cache.logits = out.logits;
}

void malconv_forward(const ModelConfig& cfg, const WeightStore& weights, ForwardCache& cache) {
  const Tensor& wa = weights.at("conv_a.weight");
  const Tensor& ba = weights.at("conv_a.bias");
  const Tensor& wb = weights.at("conv_b.weight");
  const Tensor& bb = weights.at("conv_b.bias");
  const std::size_t e = cfg.embed_dim, c_out = cfg.channels;
  const std::size_t span_len = cfg.kernel * e;
  const std::size_t len_out = conv_out_len(cfg.window, cfg.kernel, cfg.stride);

  cache.features.assign(c_out, 0.0);
  cache.gate_argmax.assign(c_out, 0);
  cache.gate_a.assign(c_out, 0.0);
  cache.gate_b.assign(c_out, 0.0);
  std::vector<bool> seen(c_out, false);
  for (std::size_t t = 0; t < len_out; ++t) {
    std::span<const float> field(cache.input.data.data() + t * cfg.stride * e, span_len);
    for (std::size_t c = 0; c < c_out; ++c) {
      const double a = ba.data[c] + dot(std::span<const float>(wa.data.data() + c * span_len, span_len), field);
      const double b = bb.data[c] + dot(std::span<const float>(wb.data.data() + c * span_len, span_len), field);
      const double g = a * sigmoid(b);
      if (!seen[c] || g > cache.features[c]) {
        seen[c] = true;
        cache.features[c] = g;
        cache.gate_argmax[c] = static_cast<std::uint32_t>(t);
        cache.gate_a[c] = a;
        cache.gate_b[c] = b;
      }
    }
  }
}

void bbdnn_forward(const ModelConfig& cfg, const WeightStore& weights, ForwardCache& cache) {
  const std::size_t n_blocks = cfg.block_channels.size();
  cache.block_inputs.clear();
  cache.block_pre.clear();
  cache.pool_argmax.clear();
  Activation h;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    const Tensor& w = weights.at(p + ".weight");
    const Tensor& bias = weights.at(p + ".bias");
    Activation pre = i == 0 ? conv1d<float>(cache.input.data, cfg.embed_dim, w, bias, cfg.conv_stride)
                            : conv1d<double>(h.data, h.channels, w, bias, cfg.conv_stride);
    const std::size_t c = pre.channels;
    Activation pooled;
    pooled.len = conv_out_len(pre.len, cfg.pool_width, cfg.pool_stride);
    pooled.channels = c;
    pooled.data.resize(pooled.len * c);
    std::vector<std::uint32_t> arg(pooled.len * c, 0);
    for (std::size_t u = 0; u < pooled.len; ++u) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = u * cfg.pool_stride;
        double best_v = std::max(pre.data[best * c + ch], 0.0);
        for (std::size_t j = 1; j < cfg.pool_width; ++j) {
          const std::size_t pos = u * cfg.pool_stride + j;
          const double v = std::max(pre.data[pos * c + ch], 0.0);
          if (v > best_v) {
            best_v = v;
            best = pos;
          }
        }
        pooled.data[u * c + ch] = best_v;
        arg[u * c + ch] = static_cast<std::uint32_t>(best);
      }
    }
    if (i > 0) cache.block_inputs.push_back(std::move(h));
    cache.block_pre.push_back(std::move(pre));
    cache.pool_argmax.push_back(std::move(arg));
    h = std::move(pooled);
  }
  const std::size_t c = h.channels;
  cache.features.assign(c, 0.0);
  cache.global_argmax.assign(c, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double best = h.data[ch];
    std::uint32_t arg = 0;
    for (std::size_t u = 1; u < h.len; ++u) {
      if (h.data[u * c + ch] > best) {
        best = h.data[u * c + ch];
        arg = static_cast<std::uint32_t>(u);
      }
    }
    cache.features[ch] = best;
    cache.global_argmax[ch] = arg;
  }
}

}  // namespace

std::string_view to_string(Arch arch) noexcept {
  return arch == Arch::MalConv ? "malconv" : "bbdnn";
}
std::string_view to_string(OutputKind out) noexcept {
  return out == OutputKind::Softmax2 ? "softmax2" : "sigmoid1";
}
std::string_view to_string(Target target) noexcept {
  return target == Target::MalwareScore ? "score" : "logit";
}
std::optional<Arch> arch_from_string(std::string_view s) noexcept {
  if (s == "malconv" || s == "MalConv") return Arch::MalConv;
  if (s == "bbdnn" || s == "BBDNN") return Arch::BBDNN;
  return std::nullopt;
}
std::optional<OutputKind> output_from_string(std::string_view s) noexcept {
  if (s == "softmax2") return OutputKind::Softmax2;
  if (s == "sigmoid1") return OutputKind::Sigmoid1;
  return std::nullopt;
}
std::optional<Target> target_from_string(std::string_view s) noexcept {
  if (s == "score") return Target::MalwareScore;
  if (s == "logit") return Target::MalwareLogit;
  return std::nullopt;
}

ModelConfig ModelConfig::malconv() { return ModelConfig{}; }

ModelConfig ModelConfig::bbdnn() {
  ModelConfig cfg;
  cfg.arch = Arch::BBDNN;
  cfg.embed_dim = 10;
  cfg.window = 102'400;
  cfg.output = OutputKind::Sigmoid1;
  return cfg;
}

ModelConfig ModelConfig::malconv_small(std::size_t window) {
  ModelConfig cfg = malconv();
  cfg.window = window;
  cfg.channels = 16;
  cfg.kernel = 8;
  cfg.stride = 4;
  return cfg;
}

ModelConfig ModelConfig::bbdnn_small(std::size_t window) {
  ModelConfig cfg = bbdnn();
  cfg.window = window;
  cfg.block_channels = {4, 6, 8, 8, 8};
  cfg.conv_kernel = 3;
  cfg.pool_width = 2;
  cfg.pool_stride = 2;
  return cfg;
}

std::size_t ModelConfig::feature_dim() const noexcept {
  if (arch == Arch::MalConv) return channels;
  return block_channels.empty() ? 0 : block_channels.back();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (vocab != kVocab) fail("vocab must be 257 (256 byte values + padding)");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (window == 0) fail("window must be positive");
  if (arch == Arch::MalConv) {
    if (channels == 0 || kernel == 0 || stride == 0) fail("malconv channels/kernel/stride must be positive");
    if (kernel > window) fail("malconv kernel exceeds window");
    return;
  }
  if (block_channels.empty()) fail("bbdnn needs at least one block");
  if (conv_kernel == 0 || conv_stride == 0 || pool_width == 0 || pool_stride == 0) {
    fail("bbdnn kernel/stride/pool sizes must be positive");
  }
  std::size_t len = window;
  for (std::size_t i = 0; i < block_channels.size(); ++i) {
    if (block_channels[i] == 0) fail("bbdnn block channels must be positive");
    len = conv_out_len(len, conv_kernel, conv_stride);
    len = conv_out_len(len, pool_width, pool_stride);
    if (len == 0) fail("bbdnn block " + std::to_string(i + 1) + " output is empty for window " + std::to_string(window));
  }
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["arch"] = to_string(cfg.arch);
  j["vocab"] = cfg.vocab;
  j["embed_dim"] = cfg.embed_dim;
  j["window"] = cfg.window;
  j["output"] = to_string(cfg.output);
  if (cfg.arch == Arch::MalConv) {
    j["channels"] = cfg.channels;
    j["kernel"] = cfg.kernel;
    j["stride"] = cfg.stride;
  } else {
    j["block_channels"] = cfg.block_channels;
    j["conv_kernel"] = cfg.conv_kernel;
    j["conv_stride"] = cfg.conv_stride;
    j["pool_width"] = cfg.pool_width;
    j["pool_stride"] = cfg.pool_stride;
  }
  return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("arch") || !j["arch"].is_string()) {
    throw Error(ErrorCode::InvalidConfig, "config needs a string \"arch\" field");
  }
  const auto arch = arch_from_string(j["arch"].get<std::string>());
  if (!arch) throw Error(ErrorCode::InvalidConfig, "unknown arch " + j["arch"].dump());
  ModelConfig cfg = *arch == Arch::MalConv ? ModelConfig::malconv() : ModelConfig::bbdnn();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "arch") continue;
      if (key == "vocab") cfg.vocab = value.get<std::size_t>();
      else if (key == "embed_dim") cfg.embed_dim = value.get<std::size_t>();
      else if (key == "window") cfg.window = value.get<std::size_t>();
      else if (key == "output") {
        const auto out = output_from_string(value.get<std::string>());
        if (!out) throw Error(ErrorCode::InvalidConfig, "unknown output " + value.dump());
        cfg.output = *out;
      } else if (key == "channels") cfg.channels = value.get<std::size_t>();
      else if (key == "kernel") cfg.kernel = value.get<std::size_t>();
      else if (key == "stride") cfg.stride = value.get<std::size_t>();
      else if (key == "block_channels") cfg.block_channels = value.get<std::vector<std::size_t>>();
      else if (key == "conv_kernel") cfg.conv_kernel = value.get<std::size_t>();
      else if (key == "conv_stride") cfg.conv_stride = value.get<std::size_t>();
      else if (key == "pool_width") cfg.pool_width = value.get<std::size_t>();
      else if (key == "pool_stride") cfg.pool_stride = value.get<std::size_t>();
      else throw Error(ErrorCode::InvalidConfig, "unknown config field \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad config field type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

const Tensor& WeightStore::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw Error(ErrorCode::ManifestMismatch, "no tensor named " + std::string(name));
}

Tensor& WeightStore::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

bool WeightStore::contains(std::string_view name) const noexcept {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t WeightStore::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::vector<LayerParam> layer_plan(const ModelConfig& cfg) {
  std::vector<LayerParam> plan;
  plan.push_back({"embedding", {cfg.vocab, cfg.embed_dim}});
  if (cfg.arch == Arch::MalConv) {
    for (const char* half : {"conv_a", "conv_b"}) {
      plan.push_back({std::string(half) + ".weight", {cfg.channels, cfg.kernel, cfg.embed_dim}});
      plan.push_back({std::string(half) + ".bias", {cfg.channels}});
    }
  } else {
    std::size_t c_in = cfg.embed_dim;
    for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
      const std::string p = "conv" + std::to_string(i + 1);
      plan.push_back({p + ".weight", {cfg.block_channels[i], cfg.conv_kernel, c_in}});
      plan.push_back({p + ".bias", {cfg.block_channels[i]}});
      c_in = cfg.block_channels[i];
    }
  }
  plan.push_back({"fc.weight", {cfg.n_outputs(), cfg.feature_dim()}});
  plan.push_back({"fc.bias", {cfg.n_outputs()}});
  return plan;
}

void check_weights(const ModelConfig& cfg, const WeightStore& weights) {
  const auto plan = layer_plan(cfg);
  const auto& entries = weights.entries();
  if (entries.size() != plan.size()) {
    throw Error(ErrorCode::ManifestMismatch, "expected " + std::to_string(plan.size()) +
                                                 " tensors for " + std::string(to_string(cfg.arch)) +
                                                 ", got " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (entries[i].name != plan[i].name || entries[i].tensor.shape != plan[i].shape) {
      throw Error(ErrorCode::ManifestMismatch,
                  "tensor " + std::to_string(i) + " is " + entries[i].name +
                      shape_to_string(entries[i].tensor.shape) + ", expected " + plan[i].name +
                      shape_to_string(plan[i].shape));
    }
  }
}

WeightStore zero_weights(const ModelConfig& cfg) {
  std::vector<NamedTensor> entries;
  for (auto& p : layer_plan(cfg)) entries.push_back({p.name, Tensor(p.shape)});
  return WeightStore(std::move(entries));
}

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore store = zero_weights(cfg);
  for (auto& [name, t] : store.entries()) {
    double bound = 1.0;
    if (name != "embedding") {
      // Biases share the fan-in of their layer's weight.
      const std::string layer = name.substr(0, name.find('.'));
      const Tensor& w = store.at(layer + ".weight");
      bound = 1.0 / std::sqrt(static_cast<double>(w.size() / w.dim(0)));
    }
    for (auto& v : t.data) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  return store;
}

TokenSequence tokenize(std::span<const std::uint8_t> bytes, std::size_t window) {
  TokenSequence tokens(window, kPadToken);
  const std::size_t n = std::min(bytes.size(), window);
  std::copy_n(bytes.begin(), n, tokens.begin());
  return tokens;
}

TokenSequence pad_sequence(std::size_t window) { return TokenSequence(window, kPadToken); }

Tensor embed(std::span<const std::uint16_t> tokens, const WeightStore& weights, const ModelConfig& cfg) {
  if (tokens.size() != cfg.window) {
    throw Error(ErrorCode::ShapeMismatch, "token sequence length " + std::to_string(tokens.size()) +
                                              " != window " + std::to_string(cfg.window));
  }
  const Tensor& table = weights.at("embedding");
  if (table.shape != Shape{cfg.vocab, cfg.embed_dim}) {
    throw Error(ErrorCode::ShapeMismatch, "embedding table shape " + shape_to_string(table.shape));
  }
  Tensor out({cfg.window, cfg.embed_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] > kPadToken || tokens[i] >= cfg.vocab) {
      throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(tokens[i]) + " at position " +
                                                  std::to_string(i));
    }
    auto src = table.row(tokens[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

bool same_activation_pattern(const ForwardCache& a, const ForwardCache& b) {
  if (a.gate_argmax != b.gate_argmax || a.pool_argmax != b.pool_argmax ||
      a.global_argmax != b.global_argmax || a.block_pre.size() != b.block_pre.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.block_pre.size(); ++i) {
    const auto& pa = a.block_pre[i].data;
    const auto& pb = b.block_pre[i].data;
    if (pa.size() != pb.size()) return false;
    for (std::size_t j = 0; j < pa.size(); ++j) {
      if ((pa[j] > 0.0) != (pb[j] > 0.0)) return false;
    }
  }
  return true;
}

ForwardResult forward(const ModelConfig& cfg, const WeightStore& weights, const Tensor& emb) {
  cfg.validate();
  check_weights(cfg, weights);
  if (emb.shape != Shape{cfg.window, cfg.embed_dim}) {
    throw Error(ErrorCode::ShapeMismatch, "embedded input " + shape_to_string(emb.shape) + " != [" +
                                              std::to_string(cfg.window) + "," +
                                              std::to_string(cfg.embed_dim) + "]");
  }
  ForwardResult r;
  r.cache.weights = &weights;
  r.cache.cfg = cfg;
  r.cache.input = emb;
  if (cfg.arch == Arch::MalConv) {
    malconv_forward(cfg, weights, r.cache);
  } else {
    bbdnn_forward(cfg, weights, r.cache);
  }
  head_forward(cfg, weights, r.cache, r.output);
  return r;
}

ForwardResult forward_tokens(const ModelConfig& cfg, const WeightStore& weights,
                             std::span<const std::uint16_t> tokens) {
  return forward(cfg, weights, embed(tokens, weights, cfg));
}

std::vector<double> target_logit_gradient(const ForwardCache& cache, Target target) {
  const auto& z = cache.logits;
  if (cache.cfg.output == OutputKind::Softmax2) {
    if (target == Target::MalwareLogit) return {-1.0, 1.0};
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    return {-p0 * p1, p0 * p1};
  }
  if (target == Target::MalwareLogit) return {1.0};
  const double s = sigmoid(z[0]);
  return {s * (1.0 - s)};
}

Gradients backward_all(const ModelConfig& cfg, const WeightStore& weights, const ForwardCache& cache,
                       std::span<const double> d_logits) {
  require_cache(cfg, weights, cache);
  if (d_logits.size() != cfg.n_outputs()) {
    throw Error(ErrorCode::ShapeMismatch, "logit gradient has wrong length");
  }
  Gradients g;
  g.params = zero_weights(cfg);

  // Fully connected head.
  const Tensor& fc_w = weights.at("fc.weight");
  const std::size_t n_in = cache.features.size();
  std::vector<double> d_feat(n_in, 0.0);
  {
    Tensor& dw = g.params.at("fc.weight");
    Tensor& db = g.params.at("fc.bias");
    for (std::size_t j = 0; j < d_logits.size(); ++j) {
      db.data[j] = static_cast<float>(d_logits[j]);
      for (std::size_t c = 0; c < n_in; ++c) {
        dw.data[j * n_in + c] = static_cast<float>(d_logits[j] * cache.features[c]);
        d_feat[c] += d_logits[j] * fc_w.data[j * n_in + c];
      }
    }
  }

  const std::size_t e = cfg.embed_dim;
  std::vector<double> d_input(cfg.window * e, 0.0);

  if (cfg.arch == Arch::MalConv) {
    const Tensor& wa = weights.at("conv_a.weight");
    const Tensor& wb = weights.at("conv_b.weight");
    const std::size_t span_len = cfg.kernel * e;
    std::vector<double> dwa(wa.size(), 0.0), dwb(wb.size(), 0.0);
    std::vector<double> dba(cfg.channels, 0.0), dbb(cfg.channels, 0.0);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      if (d_feat[c] == 0.0) continue;
      const double a = cache.gate_a[c];
      const double sb = sigmoid(cache.gate_b[c]);
      const double da = d_feat[c] * sb;
      const double db = d_feat[c] * a * sb * (1.0 - sb);
      const std::size_t base = static_cast<std::size_t>(cache.gate_argmax[c]) * cfg.stride * e;
      const float* field = cache.input.data.data() + base;
      const float* fa = wa.data.data() + c * span_len;
      const float* fb = wb.data.data() + c * span_len;
      double* di = d_input.data() + base;
      for (std::size_t j = 0; j < span_len; ++j) {
        dwa[c * span_len + j] += da * field[j];
        dwb[c * span_len + j] += db * field[j];
        di[j] += da * fa[j] + db * fb[j];
      }
      dba[c] += da;
      dbb[c] += db;
    }
    g.params.at("conv_a.weight") = to_tensor(wa.shape, dwa);
    g.params.at("conv_b.weight") = to_tensor(wb.shape, dwb);
    g.params.at("conv_a.bias") = to_tensor({cfg.channels}, dba);
    g.params.at("conv_b.bias") = to_tensor({cfg.channels}, dbb);
  } else {
    const std::size_t n_blocks = cfg.block_channels.size();
    // Gradient w.r.t. the last pooled map, routed through the global max.
    const std::size_t c_last = cache.block_pre.back().channels;
    std::vector<double> d_h(cache.pool_argmax.back().size(), 0.0);
    for (std::size_t c = 0; c < c_last; ++c) {
      d_h[static_cast<std::size_t>(cache.global_argmax[c]) * c_last + c] += d_feat[c];
    }
    for (std::size_t bi = n_blocks; bi-- > 0;) {
      const Activation& pre = cache.block_pre[bi];
      const auto& arg = cache.pool_argmax[bi];
      const std::size_t c = pre.channels;
      std::vector<double> d_pre(pre.data.size(), 0.0);
      for (std::size_t idx = 0; idx < arg.size(); ++idx) {
        if (d_h[idx] == 0.0) continue;
        const std::size_t pos = static_cast<std::size_t>(arg[idx]) * c + idx % c;
        if (pre.data[pos] > 0.0) d_pre[pos] += d_h[idx];
      }
      const std::string p = "conv" + std::to_string(bi + 1);
      const Tensor& w = weights.at(p + ".weight");
      std::vector<double> dw(w.size(), 0.0), db(c, 0.0);
      std::vector<double> d_in;
      if (bi == 0) {
        d_in.assign(cache.input.size(), 0.0);
        conv1d_backward<float>(cache.input.data, cfg.embed_dim, w, cfg.conv_stride, d_pre, dw, db, d_in);
      } else {
        const Activation& in = cache.block_inputs[bi - 1];
        d_in.assign(in.data.size(), 0.0);
        conv1d_backward<double>(in.data, in.channels, w, cfg.conv_stride, d_pre, dw, db, d_in);
      }
      g.params.at(p + ".weight") = to_tensor(w.shape, dw);
      g.params.at(p + ".bias") = to_tensor({c}, db);
      d_h = std::move(d_in);
    }
    d_input = std::move(d_h);
  }

  g.input = to_tensor({cfg.window, e}, d_input);
  return g;
}

Tensor backward_input_from_logits(const ModelConfig& cfg, const WeightStore& weights,
                                  const ForwardCache& cache, std::span<const double> d_logits) {
  return backward_all(cfg, weights, cache, d_logits).input;
}

Tensor backward_input(const ModelConfig& cfg, const WeightStore& weights, const ForwardCache& cache,
                      double d_out, Target target) {
  require_cache(cfg, weights, cache);
  auto d_logits = target_logit_gradient(cache, target);
  for (auto& v : d_logits) v *= d_out;
  return backward_input_from_logits(cfg, weights, cache, d_logits);
}

WeightStore backward_params(const ModelConfig& cfg, const WeightStore& weights, const ForwardCache& cache,
                            double d_out, Target target) {
  require_cache(cfg, weights, cache);
  auto d_logits = target_logit_gradient(cache, target);
  for (auto& v : d_logits) v *= d_out;
  return backward_all(cfg, weights, cache, d_logits).params;
}

void accumulate_embedding_grad(std::span<const std::uint16_t> tokens, const Tensor& d_emb,
                               WeightStore& grads) {
  Tensor& table = grads.at("embedding");
  const std::size_t e = table.dim(1);
  if (d_emb.shape != Shape{tokens.size(), e}) {
    throw Error(ErrorCode::ShapeMismatch, "input gradient shape " + shape_to_string(d_emb.shape));
  }
  // Accumulate per vocabulary row in double, in position order.
  std::vector<double> acc(table.size(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto src = d_emb.row(i);
    double* dst = acc.data() + static_cast<std::size_t>(tokens[i]) * e;
    for (std::size_t d = 0; d < e; ++d) dst[d] += src[d];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) table.data[i] += static_cast<float>(acc[i]);
}

}  // namespace spurscan
