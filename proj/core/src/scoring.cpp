#include "spurscan/scoring.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "spurscan/error.hpp"

namespace spurscan {

std::string_view to_string(Label label) noexcept {
  return label == Label::Goodware ? "goodware" : "malware";
}

std::optional<Label> label_from_string(std::string_view s) noexcept {
  if (s == "goodware") return Label::Goodware;
  if (s == "malware") return Label::Malware;
  return std::nullopt;
}

RegionScores sample_scores(std::span<const double> attr, const RegionMap& map, std::uint64_t window) {
  RegionScores s;
  const std::uint64_t limit = std::min<std::uint64_t>(window, attr.size());
  s.total_sq_norm = squared_norm(attr.first(static_cast<std::size_t>(limit)));
  if (s.total_sq_norm == 0.0) {
    s.skipped = true;
    return s;
  }
  s.r_dos = selected_squared_norm(attr, map, RegionKind::Dos, window) / s.total_sq_norm;
  s.r_slack = selected_squared_norm(attr, map, RegionKind::Slack, window) / s.total_sq_norm;
  s.r_overlay = selected_squared_norm(attr, map, RegionKind::Overlay, window) / s.total_sq_norm;
  s.r_text = selected_squared_norm(attr, map, RegionKind::Code, window) / s.total_sq_norm;
  return s;
}

double aggregate_of(double r_dos, double r_slack, double r_overlay, double r_text) noexcept {
  return r_text - (r_dos + r_slack + r_overlay);
}

DatasetScore aggregate(std::span<const SampleScore> samples) {
  std::vector<const SampleScore*> order;
  order.reserve(samples.size());
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const SampleScore* a, const SampleScore* b) {
    const auto& x = a->scores;
    const auto& y = b->scores;
    return std::tie(a->id, a->label, x.r_dos, x.r_slack, x.r_overlay, x.r_text) <
           std::tie(b->id, b->label, y.r_dos, y.r_slack, y.r_overlay, y.r_text);
  });

  DatasetScore d;
  double dos = 0, slack = 0, overlay = 0, text = 0;
  for (const auto* s : order) {
    if (s->scores.skipped) {
      ++d.n_skipped;
      continue;
    }
    ++d.n_samples;
    dos += s->scores.r_dos;
    slack += s->scores.r_slack;
    overlay += s->scores.r_overlay;
    text += s->scores.r_text;
  }
  if (d.n_samples == 0) {
    throw Error(ErrorCode::AllSkipped, std::to_string(samples.size()) +
                                           " samples, none with a non-zero attribution norm");
  }
  const double n = static_cast<double>(d.n_samples);
  d.mean_r_dos = dos / n;
  d.mean_r_slack = slack / n;
  d.mean_r_overlay = overlay / n;
  d.mean_r_text = text / n;
  d.aggregate = aggregate_of(d.mean_r_dos, d.mean_r_slack, d.mean_r_overlay, d.mean_r_text);
  return d;
}

ClassTable per_class_table(std::span<const SampleScore> samples) {
  ClassTable table;
  table.pooled = aggregate(samples);
  for (Label label : {Label::Goodware, Label::Malware}) {
    std::vector<SampleScore> subset;
    std::copy_if(samples.begin(), samples.end(), std::back_inserter(subset),
                 [&](const SampleScore& s) { return s.label == label; });
    const bool any = std::any_of(subset.begin(), subset.end(),
                                 [](const SampleScore& s) { return !s.scores.skipped; });
    if (!any) continue;
    ClassRow row{label, aggregate(subset)};
    (label == Label::Goodware ? table.goodware : table.malware) = row;
  }
  return table;
}

}  // namespace spurscan
