#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "spurscan/model.hpp"
#include "spurscan/scoring.hpp"

namespace spurscan {

struct TrainingExample {
  std::span<const std::uint8_t> bytes;
  Label label;
};

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.5;
  std::size_t batch = 16;
  /// L2 penalty on weights (biases excluded), applied as decoupled shrinkage.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Stop early once an epoch ends with training accuracy at or above this.
  std::optional<double> target_accuracy;
};

struct TrainResult {
  WeightStore weights;
  std::vector<double> epoch_loss;  // mean loss per epoch
  double accuracy = 0.0;           // final training accuracy, score > 0.5 => malware
  std::size_t epochs_run = 0;
};

/// Plain mini-batch SGD on cross-entropy (softmax head) or binary
/// cross-entropy (sigmoid head). Single-threaded and deterministic for a
/// fixed seed. Throws Error{Diverged} on a non-finite loss.
TrainResult train_toy(const ModelConfig& cfg, std::span<const TrainingExample> data,
                      const TrainOptions& opts);
TrainResult train_toy(const ModelConfig& cfg, WeightStore initial, std::span<const TrainingExample> data,
                      const TrainOptions& opts);

/// Fraction of examples whose malware score > 0.5 matches their label.
double accuracy(const ModelConfig& cfg, const WeightStore& weights, std::span<const TrainingExample> data);

}  // namespace spurscan
