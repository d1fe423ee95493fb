#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spurscan/corpus.hpp"
#include "spurscan/ig.hpp"
#include "spurscan/model.hpp"
#include "spurscan/scoring.hpp"

namespace spurscan {

struct SampleRecord {
  std::string path;
  Label label = Label::Goodware;
  std::uint64_t file_len = 0;
  double prediction = 0.0;  // malware probability
  double completeness_residual = 0.0;
  std::optional<std::size_t> code_section;
  bool malformed = false;
  RegionScores scores;
};

struct RejectedFile {
  std::string path;
  std::string error;
};

struct AnalysisReport {
  std::string model_id;
  std::string config_digest;  // SHA-256 of the canonical config JSON
  ModelConfig config;
  IgConfig ig;
  std::vector<SampleRecord> samples;  // sorted by path
  DatasetScore dataset;
  ClassTable classes;
  CorpusStats corpus;
  std::vector<RejectedFile> rejected;
};

/// Hex SHA-256 of config_to_json(cfg).
std::string config_digest(const ModelConfig& cfg);

/// Recomputes the dataset score and class table from the per-sample
/// records. Throws Error{AllSkipped} when no record has a usable score.
void rescore(AnalysisReport& report);

/// Canonical JSON: fixed field order, doubles in shortest round-trip form,
/// so emit(parse(emit(r))) == emit(r) byte for byte.
std::string emit_json(const AnalysisReport& report);
/// Throws Error{BadReport} on malformed input.
AnalysisReport parse_report(std::string_view json);

/// One row of the per-class summary table.
struct TableRow {
  std::string model;
  std::string data;  // "goodware", "malware" or "all"
  double dos = 0.0;
  double slack = 0.0;
  double text = 0.0;
  double overlay = 0.0;
  double aggregate = 0.0;
};

/// Rows in the order goodware, malware, all. Every row carries the pooled
/// aggregate in its Aggregate column.
std::vector<TableRow> summary_rows(const AnalysisReport& report);

/// CSV with columns model,data,DOS,Slack,.text,Overlay,Aggregate.
std::string summary_csv(std::span<const TableRow> rows);

/// Bound violations of one row (empty when valid): each ratio in [0,1],
/// ratio sum <= 1 + 1e-9, aggregate in [-1,1].
std::vector<std::string> check_row(const TableRow& row);

/// Bounds on every record and row, plus exact agreement between the stored
/// dataset/class scores and a recomputation from the records. Returns the
/// list of problems (empty when the report is consistent).
std::vector<std::string> validate_report(const AnalysisReport& report);

/// Mean signed attribution per equal-width byte-offset bin over [0, window).
struct BinnedAttribution {
  std::size_t n_bins = 0;
  std::uint64_t width = 0;
  std::uint64_t window = 0;
  std::vector<double> sum;
  std::vector<std::uint64_t> count;

  std::vector<double> means() const;
};

class BinAccumulator {
 public:
  BinAccumulator(std::size_t n_bins, std::uint64_t window);
  /// Adds one vector's per-bin sums; call in a fixed order for reproducible sums.
  void add(std::span<const double> values);
  void merge(const BinAccumulator& other);
  const BinnedAttribution& result() const noexcept { return bins_; }

 private:
  BinnedAttribution bins_;
};

BinnedAttribution bin_attributions(std::span<const std::vector<double>> attrs, std::size_t n_bins,
                                   std::uint64_t window);

/// CSV with columns bin_start,bin_end,mean_attr.
std::string bins_csv(const BinnedAttribution& bins);

}  // namespace spurscan
