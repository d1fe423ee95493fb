#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "spurscan/corpus.hpp"
#include "spurscan/ig.hpp"
#include "spurscan/model.hpp"
#include "spurscan/report.hpp"

namespace spurscan {

struct AnalyzeOptions {
  IgConfig ig;
  std::size_t threads = 1;
  std::size_t n_bins = 200;
  std::string model_id;
  /// Windows reported in CorpusStats::n_over_window besides the model's own.
  std::vector<std::uint64_t> stat_windows{102'400, 1'048'576};
  /// Progress and per-file warnings; may be called from worker threads
  /// (calls are serialized).
  std::function<void(std::string_view)> log;
};

struct AnalysisResult {
  AnalysisReport report;
  BinnedAttribution bins;
};

/// Scans the corpus, runs Integrated Gradients on every parsed file and
/// scores it against its region map. Per-file failures are logged and
/// listed in the report; results do not depend on the thread count.
/// Throws Error{AllSkipped} if no file yields a usable score.
AnalysisResult analyze(const ModelConfig& cfg, const WeightStore& weights, const CorpusManifest& manifest,
                       const AnalyzeOptions& opts);

}  // namespace spurscan
