#include "spurscan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace spurscan {

namespace {

double rel_err(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

std::vector<std::size_t> candidates(const std::vector<float>& grad, double degenerate,
                                    std::mt19937_64& rng) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (std::abs(grad[i]) > degenerate) idx.push_back(i);
  }
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Central difference of `eval` around cell `x`, using the float-rounded
// perturbed values. Returns nullopt if either side lands on a different
// activation pattern than `base`.
template <typename Eval>
std::optional<double> central_difference(float& x, double step, const ForwardCache& base, Eval eval) {
  const float orig = x;
  const float plus = static_cast<float>(orig + step);
  const float minus = static_cast<float>(orig - step);
  x = plus;
  auto up = eval();
  x = minus;
  auto down = eval();
  x = orig;
  if (!same_activation_pattern(base, up.cache) || !same_activation_pattern(base, down.cache)) {
    return std::nullopt;
  }
  return (up.value - down.value) / (static_cast<double>(plus) - static_cast<double>(minus));
}

struct Eval {
  double value;
  ForwardCache cache;
};

}  // namespace

GradcheckReport gradcheck(const ModelConfig& cfg, const WeightStore& weights,
                          std::span<const std::uint16_t> tokens, std::uint64_t seed,
                          const GradcheckOptions& opts) {
  GradcheckReport report;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);

  Tensor emb = embed(tokens, weights, cfg);
  const auto base = forward(cfg, weights, emb);
  auto d_logits = target_logit_gradient(base.cache, opts.target);
  Gradients grads = backward_all(cfg, weights, base.cache, d_logits);
  accumulate_embedding_grad(tokens, grads.input, grads.params);

  // Input-embedding cells.
  {
    auto eval = [&]() {
      auto r = forward(cfg, weights, emb);
      return Eval{r.output.value(opts.target), std::move(r.cache)};
    };
    for (std::size_t i : candidates(grads.input.data, opts.degenerate, rng)) {
      if (report.input_checked >= opts.input_cells) break;
      auto numeric = central_difference(emb.data[i], opts.step, base.cache, eval);
      if (!numeric) {
        ++report.kinks_skipped;
        continue;
      }
      report.max_rel_err_input = std::max(report.max_rel_err_input, rel_err(grads.input.data[i], *numeric));
      ++report.input_checked;
    }
  }

  // Parameters, including the embedding rows reached through the tokens.
  {
    WeightStore perturbed = weights;
    std::vector<float> flat;
    std::vector<std::pair<std::size_t, std::size_t>> where;
    for (std::size_t t = 0; t < grads.params.entries().size(); ++t) {
      const auto& g = grads.params.entries()[t].tensor;
      for (std::size_t j = 0; j < g.size(); ++j) {
        flat.push_back(g.data[j]);
        where.emplace_back(t, j);
      }
    }
    ForwardCache base_p = forward_tokens(cfg, perturbed, tokens).cache;
    auto eval = [&]() {
      auto r = forward_tokens(cfg, perturbed, tokens);
      return Eval{r.output.value(opts.target), std::move(r.cache)};
    };
    for (std::size_t i : candidates(flat, opts.degenerate, rng)) {
      if (report.params_checked >= opts.parameters) break;
      auto [t, j] = where[i];
      auto numeric = central_difference(perturbed.entries()[t].tensor.data[j], opts.step, base_p, eval);
      if (!numeric) {
        ++report.kinks_skipped;
        continue;
      }
      report.max_rel_err_params = std::max(report.max_rel_err_params, rel_err(flat[i], *numeric));
      ++report.params_checked;
    }
  }
  return report;
}

GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts) {
  cfg.validate();
  const WeightStore weights = init_weights(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  // Real bytes over three quarters of the window, padding after.
  std::vector<std::uint8_t> bytes(cfg.window - cfg.window / 4);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() >> 56);
  const TokenSequence tokens = tokenize(bytes, cfg.window);
  return gradcheck(cfg, weights, tokens, seed, opts);
}

}  // namespace spurscan
