#pragma once

#include <cstddef>
#include <cstdint>

#include "spurscan/model.hpp"

namespace spurscan {

struct GradcheckOptions {
  double step = 1e-3;
  std::size_t input_cells = 200;
  std::size_t parameters = 200;
  /// Cells with |analytic| at or below this are degenerate and not compared.
  double degenerate = 1e-6;
  Target target = Target::MalwareScore;
};

struct GradcheckReport {
  double max_rel_err_input = 0.0;
  double max_rel_err_params = 0.0;
  std::size_t input_checked = 0;
  std::size_t params_checked = 0;
  /// Perturbations that changed a max-pool winner or ReLU state, where the
  /// function is not differentiable; these are resampled, not compared.
  std::size_t kinks_skipped = 0;
};

/// Compares analytic input and parameter gradients against central finite
/// differences (evaluated in float32 storage) on a sampled subset of the
/// non-degenerate cells. Relative error is |a - n| / max(|a|, |n|).
GradcheckReport gradcheck(const ModelConfig& cfg, const WeightStore& weights,
                          std::span<const std::uint16_t> tokens, std::uint64_t seed,
                          const GradcheckOptions& opts = {});

/// Random weights and a random byte input with a padded tail, both from `seed`.
GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed,
                          const GradcheckOptions& opts = {});

}  // namespace spurscan
