#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spurscan/model.hpp"

namespace spurscan {

/// The only supported baseline: a full window of the padding token.
enum class Baseline { PadFile };

struct IgConfig {
  std::size_t steps = 50;
  Baseline baseline = Baseline::PadFile;
  Target target = Target::MalwareScore;
};

/// One signed attribution per byte of the windowed input. Positive values
/// push toward the malware class.
struct AttributionVector {
  std::vector<double> values;  // length min(file_len, window)
  double completeness_residual = 0.0;
  double score_x = 0.0;         // target at the input
  double score_baseline = 0.0;  // target at the pad baseline
};

/// Integrated Gradients in embedding space from the pad baseline B to the
/// embedded input E. Gradients are taken at B + (k/m)(E - B) for k = 1..m
/// (right-endpoint Riemann sum) and each byte's attribution is the sum over
/// embedding dimensions of (E - B) * mean gradient.
AttributionVector integrated_gradients(const ModelConfig& cfg, const WeightStore& weights,
                                       const IgConfig& igc, std::span<const std::uint8_t> bytes);

/// residual <= rel_tol * max(|score_x - score_baseline|, 1e-6)
bool completeness_check(const AttributionVector& attr, double rel_tol) noexcept;

}  // namespace spurscan
