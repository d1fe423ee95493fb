#include "spurscan/analyze.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>

#include "spurscan/error.hpp"
#include "spurscan/parallel.hpp"

namespace spurscan {

namespace {

struct PerFile {
  bool ok = false;
  std::string error;
  SampleRecord record;
  std::vector<double> attribution;
};

}  // namespace

AnalysisResult analyze(const ModelConfig& cfg, const WeightStore& weights, const CorpusManifest& manifest,
                       const AnalyzeOptions& opts) {
  cfg.validate();
  check_weights(cfg, weights);
  std::mutex log_mu;
  auto log = [&](const std::string& msg) {
    if (!opts.log) return;
    std::lock_guard lock(log_mu);
    opts.log(msg);
  };

  std::vector<std::uint64_t> windows = opts.stat_windows;
  windows.push_back(cfg.window);
  std::sort(windows.begin(), windows.end());
  windows.erase(std::unique(windows.begin(), windows.end()), windows.end());

  ScanResult scanned = scan(manifest, windows, opts.threads);

  AnalysisResult result;
  AnalysisReport& report = result.report;
  report.model_id = opts.model_id;
  report.config = cfg;
  report.config_digest = config_digest(cfg);
  report.ig = opts.ig;

  std::vector<PerFile> per_file(scanned.files.size());
  std::atomic<std::size_t> done{0};
  const std::size_t step = std::max<std::size_t>(1, scanned.files.size() / 10);
  parallel_for(scanned.files.size(), opts.threads, [&](std::size_t i) {
    const ScannedFile& f = scanned.files[i];
    PerFile& out = per_file[i];
    if (f.status != ScanStatus::Parsed) {
      out.error = f.error;
      return;
    }
    try {
      const auto bytes = read_file(f.entry.path);
      AttributionVector attr = integrated_gradients(cfg, weights, opts.ig, bytes);
      SampleRecord& rec = out.record;
      rec.path = f.entry.path.generic_string();
      rec.label = f.entry.label;
      rec.file_len = bytes.size();
      rec.prediction = opts.ig.target == Target::MalwareScore ? attr.score_x : 1.0 / (1.0 + std::exp(-attr.score_x));
      rec.completeness_residual = attr.completeness_residual;
      rec.code_section = f.map->code_section_index;
      rec.malformed = f.map->malformed;
      rec.scores = sample_scores(attr.values, *f.map, cfg.window);
      out.attribution = std::move(attr.values);
      out.ok = true;
      if (rec.scores.skipped) log("zero attribution norm, skipped: " + rec.path);
      const std::size_t n = ++done;
      if (n % step == 0 || n == scanned.files.size()) {
        log("analyzed " + std::to_string(n) + "/" + std::to_string(scanned.files.size()));
      }
    } catch (const Error& e) {
      out.error = e.what();
    }
  });

  std::vector<std::size_t> order(per_file.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scanned.files[a].entry.path.generic_string() < scanned.files[b].entry.path.generic_string();
  });

  BinAccumulator bins(opts.n_bins, cfg.window);
  for (std::size_t i : order) {
    auto& pf = per_file[i];
    if (!pf.ok) {
      report.rejected.push_back({scanned.files[i].entry.path.generic_string(), pf.error});
      log("rejected " + scanned.files[i].entry.path.generic_string() + ": " + pf.error);
      continue;
    }
    bins.add(pf.attribution);
    report.samples.push_back(std::move(pf.record));
  }

  // Files that parsed during the scan but failed later count as rejected too.
  for (std::size_t i = 0; i < per_file.size(); ++i) {
    if (!per_file[i].ok && scanned.files[i].status == ScanStatus::Parsed) {
      scanned.files[i].status = ScanStatus::Rejected;
    }
  }
  report.corpus = corpus_stats(scanned.files, windows);

  rescore(report);
  result.bins = bins.result();
  return result;
}

}  // namespace spurscan
