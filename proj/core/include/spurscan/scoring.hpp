#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spurscan/pe.hpp"

namespace spurscan {

enum class Label { Goodware, Malware };

std::string_view to_string(Label label) noexcept;
std::optional<Label> label_from_string(std::string_view s) noexcept;

/// Share of one sample's squared attribution norm that falls in each
/// region: r_kind = ||select(attr, kind)||^2 / ||attr||^2.
struct RegionScores {
  double r_dos = 0.0;
  double r_slack = 0.0;
  double r_overlay = 0.0;
  double r_text = 0.0;
  double total_sq_norm = 0.0;
  bool skipped = false;  // zero attribution norm: ratios undefined

  double spurious() const noexcept { return r_dos + r_slack + r_overlay; }

  friend bool operator==(const RegionScores&, const RegionScores&) = default;
};

/// Regions are intersected with [0, window) first. A sample without an
/// executable section gets r_text = 0.
RegionScores sample_scores(std::span<const double> attr, const RegionMap& map, std::uint64_t window);

struct SampleScore {
  std::string id;
  Label label = Label::Goodware;
  RegionScores scores;
};

struct DatasetScore {
  double mean_r_dos = 0.0;
  double mean_r_slack = 0.0;
  double mean_r_overlay = 0.0;
  double mean_r_text = 0.0;
  double aggregate = 0.0;
  std::size_t n_samples = 0;  // samples contributing to the means
  std::size_t n_skipped = 0;

  friend bool operator==(const DatasetScore&, const DatasetScore&) = default;
};

/// Means over the non-skipped samples and the aggregate
///   mean_r_text - (mean_r_dos + mean_r_slack + mean_r_overlay).
/// Samples are reduced in id order, so the result does not depend on the
/// order of `samples`. Throws Error{AllSkipped} if nothing is left.
DatasetScore aggregate(std::span<const SampleScore> samples);

/// The aggregate formula applied to already-averaged ratios.
double aggregate_of(double r_dos, double r_slack, double r_overlay, double r_text) noexcept;

struct ClassRow {
  Label label;
  DatasetScore score;  // means over this class only
};

struct ClassTable {
  std::optional<ClassRow> goodware;
  std::optional<ClassRow> malware;
  DatasetScore pooled;  // all samples together; this carries the reported aggregate
};

ClassTable per_class_table(std::span<const SampleScore> samples);

}  // namespace spurscan
