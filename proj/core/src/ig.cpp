#include "spurscan/ig.hpp"

#include <algorithm>
#include <cmath>

#include "spurscan/error.hpp"

namespace spurscan {

AttributionVector integrated_gradients(const ModelConfig& cfg, const WeightStore& weights,
                                       const IgConfig& igc, std::span<const std::uint8_t> bytes) {
  if (igc.steps == 0) throw Error(ErrorCode::InvalidConfig, "IG needs at least one step");
  const std::size_t n = std::min(bytes.size(), cfg.window);
  const std::size_t e = cfg.embed_dim;
  const std::size_t used = n * e;  // cells where input and baseline can differ

  const Tensor input = embed(tokenize(bytes, cfg.window), weights, cfg);
  const Tensor base = embed(pad_sequence(cfg.window), weights, cfg);

  std::vector<double> diff(used);
  for (std::size_t i = 0; i < used; ++i) {
    diff[i] = static_cast<double>(input.data[i]) - static_cast<double>(base.data[i]);
  }

  AttributionVector attr;
  attr.score_x = forward(cfg, weights, input).output.value(igc.target);
  attr.score_baseline = forward(cfg, weights, base).output.value(igc.target);
  attr.values.assign(n, 0.0);

  std::vector<double> grad_sum(used, 0.0);
  Tensor point = base;
  const double m = static_cast<double>(igc.steps);
  for (std::size_t k = 1; used > 0 && k <= igc.steps; ++k) {
    const double alpha = static_cast<double>(k) / m;
    for (std::size_t i = 0; i < used; ++i) {
      point.data[i] = static_cast<float>(base.data[i] + alpha * diff[i]);
    }
    const auto r = forward(cfg, weights, point);
    const Tensor g = backward_input(cfg, weights, r.cache, 1.0, igc.target);
    for (std::size_t i = 0; i < used; ++i) grad_sum[i] += g.data[i];
  }

  double total = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    double v = 0.0;
    for (std::size_t d = 0; d < e; ++d) v += diff[pos * e + d] * (grad_sum[pos * e + d] / m);
    attr.values[pos] = v;
    total += v;
  }
  attr.completeness_residual = std::abs(total - (attr.score_x - attr.score_baseline));
  return attr;
}

bool completeness_check(const AttributionVector& attr, double rel_tol) noexcept {
  const double gap = std::max(std::abs(attr.score_x - attr.score_baseline), 1e-6);
  return attr.completeness_residual <= rel_tol * gap;
}

}  // namespace spurscan
