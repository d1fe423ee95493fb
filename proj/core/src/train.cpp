#include "spurscan/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spurscan/error.hpp"

namespace spurscan {

namespace {

// Loss and d(loss)/d(logits) for one example.
double loss_and_grad(const ModelConfig& cfg, const ModelOutput& out, Label label, std::vector<double>& d_logits) {
  const double y = label == Label::Malware ? 1.0 : 0.0;
  constexpr double kFloor = 1e-12;
  if (cfg.output == OutputKind::Softmax2) {
    const double p_true = label == Label::Malware ? out.probs[1] : out.probs[0];
    d_logits = {out.probs[0] - (1.0 - y), out.probs[1] - y};
    return -std::log(std::max(p_true, kFloor));
  }
  const double s = out.probs[0];
  d_logits = {s - y};
  return -(y * std::log(std::max(s, kFloor)) + (1.0 - y) * std::log(std::max(1.0 - s, kFloor)));
}

}  // namespace

double accuracy(const ModelConfig& cfg, const WeightStore& weights, std::span<const TrainingExample> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const auto r = forward_tokens(cfg, weights, tokenize(ex.bytes, cfg.window));
    const bool pred_malware = r.output.malware_score > 0.5;
    if (pred_malware == (ex.label == Label::Malware)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_toy(const ModelConfig& cfg, std::span<const TrainingExample> data, const TrainOptions& opts) {
  return train_toy(cfg, init_weights(cfg, opts.seed), data, opts);
}

TrainResult train_toy(const ModelConfig& cfg, WeightStore initial, std::span<const TrainingExample> data,
                      const TrainOptions& opts) {
  cfg.validate();
  check_weights(cfg, initial);
  if (opts.batch == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be positive");

  TrainResult result;
  result.weights = std::move(initial);
  WeightStore& w = result.weights;

  std::vector<TokenSequence> tokens;
  tokens.reserve(data.size());
  for (const auto& ex : data) tokens.push_back(tokenize(ex.bytes, cfg.window));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed ^ 0x5DEECE66Dull);

  std::vector<double> d_logits;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t end = std::min(order.size(), start + opts.batch);
      std::vector<std::vector<double>> acc;
      for (const auto& nt : w.entries()) acc.emplace_back(nt.tensor.size(), 0.0);

      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const auto r = forward_tokens(cfg, w, tokens[i]);
        const double loss = loss_and_grad(cfg, r.output, data[i].label, d_logits);
        if (!std::isfinite(loss)) {
          throw Error(ErrorCode::Diverged, "non-finite loss at epoch " + std::to_string(epoch + 1));
        }
        epoch_loss += loss;
        Gradients g = backward_all(cfg, w, r.cache, d_logits);
        accumulate_embedding_grad(tokens[i], g.input, g.params);
        for (std::size_t t = 0; t < acc.size(); ++t) {
          const auto& gd = g.params.entries()[t].tensor.data;
          for (std::size_t j = 0; j < gd.size(); ++j) acc[t][j] += gd[j];
        }
      }
      const double scale = opts.lr / static_cast<double>(end - start);
      for (std::size_t t = 0; t < acc.size(); ++t) {
        auto& nt = w.entries()[t];
        const bool is_bias = nt.name.ends_with(".bias");
        const double shrink = is_bias ? 1.0 : 1.0 - opts.lr * opts.weight_decay;
        auto& wd = nt.tensor.data;
        for (std::size_t j = 0; j < wd.size(); ++j) {
          wd[j] = static_cast<float>(shrink * wd[j] - scale * acc[t][j]);
        }
      }
    }
    result.epoch_loss.push_back(data.empty() ? 0.0 : epoch_loss / static_cast<double>(data.size()));
    result.epochs_run = epoch + 1;
    if (opts.target_accuracy) {
      result.accuracy = accuracy(cfg, w, data);
      if (result.accuracy >= *opts.target_accuracy) return result;
    }
  }
  result.accuracy = accuracy(cfg, w, data);
  return result;
}

}  // namespace spurscan
