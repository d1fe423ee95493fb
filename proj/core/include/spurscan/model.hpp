#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spurscan/tensor.hpp"

namespace spurscan {

enum class Arch { MalConv, BBDNN };
enum class OutputKind { Softmax2, Sigmoid1 };

/// What attributions and input gradients differentiate: the malware
/// probability, or its log-odds (z1 - z0 for a softmax head, z for sigmoid).
enum class Target { MalwareScore, MalwareLogit };

std::string_view to_string(Arch arch) noexcept;
std::string_view to_string(OutputKind out) noexcept;
std::string_view to_string(Target target) noexcept;
std::optional<Arch> arch_from_string(std::string_view s) noexcept;
std::optional<OutputKind> output_from_string(std::string_view s) noexcept;
std::optional<Target> target_from_string(std::string_view s) noexcept;

inline constexpr std::uint16_t kPadToken = 256;
inline constexpr std::size_t kVocab = 257;

/// Architecture hyperparameters of a byte-level CNN.
///
/// MalConv: embedding -> gated conv (A * sigmoid(B), `channels` filters of
/// width `kernel`, step `stride`) -> global max-pool -> fully connected head.
///
/// BBDNN: embedding -> `block_channels.size()` blocks of
/// conv(`conv_kernel`, `conv_stride`) + ReLU + max-pool(`pool_width`,
/// `pool_stride`) -> global max-pool -> fully connected head.
///
/// Convolution kernels are stored as [out_channels, kernel, in_channels] so
/// every receptive field is one contiguous slice of the position-major input.
struct ModelConfig {
  Arch arch = Arch::MalConv;
  std::size_t vocab = kVocab;
  std::size_t embed_dim = 8;
  std::size_t window = 1'048'576;
  OutputKind output = OutputKind::Softmax2;

  // MalConv
  std::size_t channels = 128;
  std::size_t kernel = 512;
  std::size_t stride = 512;

  // BBDNN
  std::vector<std::size_t> block_channels{16, 32, 64, 96, 128};
  std::size_t conv_kernel = 8;
  std::size_t conv_stride = 1;
  std::size_t pool_width = 4;
  std::size_t pool_stride = 4;

  static ModelConfig malconv();
  static ModelConfig bbdnn();
  /// Reduced configs used for gradient checks and toy training.
  static ModelConfig malconv_small(std::size_t window = 256);
  static ModelConfig bbdnn_small(std::size_t window = 256);

  std::size_t n_outputs() const noexcept { return output == OutputKind::Softmax2 ? 2 : 1; }
  /// Width of the vector entering the fully connected head.
  std::size_t feature_dim() const noexcept;

  /// Throws Error{InvalidConfig} if any stage would produce an empty output.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Canonical JSON for a config (only the fields relevant to its arch).
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(std::string_view json);

struct NamedTensor {
  std::string name;
  Tensor tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Parameter tensors in layer-plan order.
class WeightStore {
 public:
  WeightStore() = default;
  explicit WeightStore(std::vector<NamedTensor> entries) : entries_(std::move(entries)) {}

  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  bool contains(std::string_view name) const noexcept;

  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  std::size_t parameter_count() const noexcept;

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

struct LayerParam {
  std::string name;
  Shape shape;
};

/// Names and shapes every WeightStore for `cfg` must have, in order.
std::vector<LayerParam> layer_plan(const ModelConfig& cfg);

/// Throws Error{ManifestMismatch} if names/shapes disagree with layer_plan.
void check_weights(const ModelConfig& cfg, const WeightStore& weights);

WeightStore zero_weights(const ModelConfig& cfg);
/// Uniform fan-in scaled initialization from a fixed-seed mt19937_64.
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

using TokenSequence = std::vector<std::uint16_t>;

/// First `window` bytes of `bytes`, padded with kPadToken to exactly `window`.
TokenSequence tokenize(std::span<const std::uint8_t> bytes, std::size_t window);
/// A window-length sequence of kPadToken (the "empty file").
TokenSequence pad_sequence(std::size_t window);

/// Row i of the result is embedding row tokens[i]. Throws
/// Error{TokenOutOfRange} or Error{ShapeMismatch} on bad input.
Tensor embed(std::span<const std::uint16_t> tokens, const WeightStore& weights,
             const ModelConfig& cfg);

/// Position-major activation map [len, channels] in double precision.
struct Activation {
  std::size_t len = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Activations a backward pass needs. Valid only for the (config, weights,
/// input) triple that produced it. Parameters and the embedded input are
/// float32; everything computed from them stays in double.
struct ForwardCache {
  const WeightStore* weights = nullptr;
  ModelConfig cfg;
  Tensor input;                 // [window, embed_dim]
  std::vector<double> features;  // head input
  std::vector<double> logits;

  // MalConv: gate halves at the pooled position of each channel.
  std::vector<std::uint32_t> gate_argmax;
  std::vector<double> gate_a;
  std::vector<double> gate_b;

  // BBDNN: inputs of blocks 2..n (block 1 reads `input`), conv
  // pre-activations, and pool argmax (index into conv output positions).
  std::vector<Activation> block_inputs;
  std::vector<Activation> block_pre;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<std::uint32_t> global_argmax;

  bool valid() const noexcept { return weights != nullptr; }
};

/// True if both caches route gradients through the same max-pool winners
/// and ReLU on/off states (i.e. the network is locally the same linear piece).
bool same_activation_pattern(const ForwardCache& a, const ForwardCache& b);

struct ModelOutput {
  std::vector<double> logits;
  std::vector<double> probs;
  double malware_score = 0.0;
  double malware_logit = 0.0;

  double value(Target t) const noexcept {
    return t == Target::MalwareScore ? malware_score : malware_logit;
  }
};

struct ForwardResult {
  ModelOutput output;
  ForwardCache cache;
};

ForwardResult forward(const ModelConfig& cfg, const WeightStore& weights, const Tensor& emb);
ForwardResult forward_tokens(const ModelConfig& cfg, const WeightStore& weights,
                             std::span<const std::uint16_t> tokens);

/// d(target)/d(logits) for the head output held in `cache`.
std::vector<double> target_logit_gradient(const ForwardCache& cache, Target target);

/// Gradient of `d_out * target` with respect to the embedded input.
Tensor backward_input(const ModelConfig& cfg, const WeightStore& weights, const ForwardCache& cache,
                      double d_out, Target target = Target::MalwareScore);

/// Gradient with respect to the embedded input, starting from an arbitrary
/// upstream gradient on the logits.
Tensor backward_input_from_logits(const ModelConfig& cfg, const WeightStore& weights,
                                  const ForwardCache& cache, std::span<const double> d_logits);

/// Parameter gradients (same layout as `weights`). The embedding entry is
/// zero here; scatter the input gradient with accumulate_embedding_grad.
WeightStore backward_params(const ModelConfig& cfg, const WeightStore& weights,
                            const ForwardCache& cache, double d_out,
                            Target target = Target::MalwareScore);

/// Parameter gradients and input gradient in one sweep, from logit gradients.
struct Gradients {
  WeightStore params;
  Tensor input;
};
Gradients backward_all(const ModelConfig& cfg, const WeightStore& weights,
                       const ForwardCache& cache, std::span<const double> d_logits);

/// grads["embedding"][tokens[i]] += d_emb[i] for every position.
void accumulate_embedding_grad(std::span<const std::uint16_t> tokens, const Tensor& d_emb,
                               WeightStore& grads);

}  // namespace spurscan
