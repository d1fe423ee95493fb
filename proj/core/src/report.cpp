#include "spurscan/report.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "spurscan/error.hpp"

namespace spurscan {

namespace {

using json = nlohmann::ordered_json;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<SampleScore> to_scores(const std::vector<SampleRecord>& records) {
  std::vector<SampleScore> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.path, r.label, r.scores});
  return out;
}

json dataset_json(const DatasetScore& d) {
  json j;
  j["mean_r_dos"] = d.mean_r_dos;
  j["mean_r_slack"] = d.mean_r_slack;
  j["mean_r_text"] = d.mean_r_text;
  j["mean_r_overlay"] = d.mean_r_overlay;
  j["aggregate"] = d.aggregate;
  j["n_samples"] = d.n_samples;
  j["n_skipped"] = d.n_skipped;
  return j;
}

DatasetScore dataset_from(const json& j) {
  DatasetScore d;
  d.mean_r_dos = j.at("mean_r_dos").get<double>();
  d.mean_r_slack = j.at("mean_r_slack").get<double>();
  d.mean_r_text = j.at("mean_r_text").get<double>();
  d.mean_r_overlay = j.at("mean_r_overlay").get<double>();
  d.aggregate = j.at("aggregate").get<double>();
  d.n_samples = j.at("n_samples").get<std::size_t>();
  d.n_skipped = j.at("n_skipped").get<std::size_t>();
  return d;
}

json count_map(const std::map<std::uint64_t, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<std::uint64_t, std::size_t> count_map_from(const json& j) {
  std::map<std::uint64_t, std::size_t> m;
  for (const auto& [k, v] : j.items()) m[std::stoull(k)] = v.get<std::size_t>();
  return m;
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

std::string config_digest(const ModelConfig& cfg) {
  const std::string text = config_to_json(cfg);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::InvalidConfig, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 0xF];
  }
  return hex;
}

void rescore(AnalysisReport& report) {
  const auto scores = to_scores(report.samples);
  report.classes = per_class_table(scores);
  report.dataset = report.classes.pooled;
}

std::string emit_json(const AnalysisReport& r) {
  json j;
  j["model"]["id"] = r.model_id;
  j["model"]["config_digest"] = r.config_digest;
  j["model"]["config"] = json::parse(config_to_json(r.config));
  j["ig"]["steps"] = r.ig.steps;
  j["ig"]["baseline"] = "pad_file";
  j["ig"]["target"] = to_string(r.ig.target);

  j["samples"] = json::array();
  for (const auto& s : r.samples) {
    json e;
    e["path"] = s.path;
    e["label"] = to_string(s.label);
    e["file_len"] = s.file_len;
    e["prediction"] = s.prediction;
    e["completeness_residual"] = s.completeness_residual;
    e["code_section"] = s.code_section ? json(*s.code_section) : json(nullptr);
    e["malformed"] = s.malformed;
    e["scores"]["r_dos"] = s.scores.r_dos;
    e["scores"]["r_slack"] = s.scores.r_slack;
    e["scores"]["r_text"] = s.scores.r_text;
    e["scores"]["r_overlay"] = s.scores.r_overlay;
    e["scores"]["total_sq_norm"] = s.scores.total_sq_norm;
    e["scores"]["skipped"] = s.scores.skipped;
    j["samples"].push_back(std::move(e));
  }

  j["dataset"] = dataset_json(r.dataset);
  j["classes"] = json::array();
  for (const auto* row : {&r.classes.goodware, &r.classes.malware}) {
    if (!*row) continue;
    json c;
    c["label"] = to_string((*row)->label);
    c.update(dataset_json((*row)->score));
    j["classes"].push_back(std::move(c));
  }

  j["corpus"]["n_total"] = r.corpus.n_total;
  j["corpus"]["n_parsed"] = r.corpus.n_parsed;
  j["corpus"]["n_rejected"] = r.corpus.n_rejected;
  j["corpus"]["n_over_window"] = count_map(r.corpus.n_over_window);
  j["corpus"]["size_histogram"] = count_map(r.corpus.size_histogram);
  j["corpus"]["rejected"] = json::array();
  for (const auto& rej : r.rejected) j["corpus"]["rejected"].push_back({{"path", rej.path}, {"error", rej.error}});
  return j.dump(2) + "\n";
}

AnalysisReport parse_report(std::string_view text) {
  AnalysisReport r;
  try {
    const json j = json::parse(text);
    r.model_id = j.at("model").at("id").get<std::string>();
    r.config_digest = j.at("model").at("config_digest").get<std::string>();
    r.config = config_from_json(j.at("model").at("config").dump());
    r.ig.steps = j.at("ig").at("steps").get<std::size_t>();
    const auto target = target_from_string(j.at("ig").at("target").get<std::string>());
    if (!target) throw Error(ErrorCode::BadReport, "unknown IG target");
    r.ig.target = *target;

    for (const auto& e : j.at("samples")) {
      SampleRecord s;
      s.path = e.at("path").get<std::string>();
      const auto label = label_from_string(e.at("label").get<std::string>());
      if (!label) throw Error(ErrorCode::BadReport, "unknown label in sample " + s.path);
      s.label = *label;
      s.file_len = e.at("file_len").get<std::uint64_t>();
      s.prediction = e.at("prediction").get<double>();
      s.completeness_residual = e.at("completeness_residual").get<double>();
      if (!e.at("code_section").is_null()) s.code_section = e.at("code_section").get<std::size_t>();
      s.malformed = e.at("malformed").get<bool>();
      const auto& sc = e.at("scores");
      s.scores.r_dos = sc.at("r_dos").get<double>();
      s.scores.r_slack = sc.at("r_slack").get<double>();
      s.scores.r_text = sc.at("r_text").get<double>();
      s.scores.r_overlay = sc.at("r_overlay").get<double>();
      s.scores.total_sq_norm = sc.at("total_sq_norm").get<double>();
      s.scores.skipped = sc.at("skipped").get<bool>();
      r.samples.push_back(std::move(s));
    }

    r.dataset = dataset_from(j.at("dataset"));
    r.classes.pooled = r.dataset;
    for (const auto& c : j.at("classes")) {
      const auto label = label_from_string(c.at("label").get<std::string>());
      if (!label) throw Error(ErrorCode::BadReport, "unknown class label");
      ClassRow row{*label, dataset_from(c)};
      (*label == Label::Goodware ? r.classes.goodware : r.classes.malware) = row;
    }

    const auto& corpus = j.at("corpus");
    r.corpus.n_total = corpus.at("n_total").get<std::size_t>();
    r.corpus.n_parsed = corpus.at("n_parsed").get<std::size_t>();
    r.corpus.n_rejected = corpus.at("n_rejected").get<std::size_t>();
    r.corpus.n_over_window = count_map_from(corpus.at("n_over_window"));
    r.corpus.size_histogram = count_map_from(corpus.at("size_histogram"));
    for (const auto& rej : corpus.at("rejected")) {
      r.rejected.push_back({rej.at("path").get<std::string>(), rej.at("error").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadReport, e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::BadReport, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadReport) throw;
    throw Error(ErrorCode::BadReport, e.what());
  }
  return r;
}

std::vector<TableRow> summary_rows(const AnalysisReport& report) {
  std::vector<TableRow> rows;
  auto add = [&](const std::string& data, const DatasetScore& d) {
    rows.push_back({report.model_id, data, d.mean_r_dos, d.mean_r_slack, d.mean_r_text, d.mean_r_overlay,
                    report.dataset.aggregate});
  };
  if (report.classes.goodware) add("goodware", report.classes.goodware->score);
  if (report.classes.malware) add("malware", report.classes.malware->score);
  add("all", report.dataset);
  return rows;
}

std::string summary_csv(std::span<const TableRow> rows) {
  std::string out = "model,data,DOS,Slack,.text,Overlay,Aggregate\n";
  for (const auto& r : rows) {
    out += r.model + "," + r.data + "," + fmt17(r.dos) + "," + fmt17(r.slack) + "," + fmt17(r.text) + "," +
           fmt17(r.overlay) + "," + fmt17(r.aggregate) + "\n";
  }
  return out;
}

std::vector<std::string> check_row(const TableRow& row) {
  std::vector<std::string> problems;
  const std::string who = row.model + "/" + row.data + ": ";
  const std::pair<const char*, double> ratios[] = {
      {"DOS", row.dos}, {"Slack", row.slack}, {".text", row.text}, {"Overlay", row.overlay}};
  for (const auto& [name, v] : ratios) {
    if (!in_unit(v)) problems.push_back(who + name + " ratio " + fmt17(v) + " outside [0,1]");
  }
  const double sum = row.dos + row.slack + row.text + row.overlay;
  if (!(sum <= 1.0 + 1e-9)) problems.push_back(who + "ratio sum " + fmt17(sum) + " exceeds 1");
  if (!(row.aggregate >= -1.0 && row.aggregate <= 1.0)) {
    problems.push_back(who + "aggregate " + fmt17(row.aggregate) + " outside [-1,1]");
  }
  return problems;
}

std::vector<std::string> validate_report(const AnalysisReport& report) {
  std::vector<std::string> problems;
  for (const auto& s : report.samples) {
    TableRow row{report.model_id, s.path, s.scores.r_dos, s.scores.r_slack, s.scores.r_text, s.scores.r_overlay,
                 aggregate_of(s.scores.r_dos, s.scores.r_slack, s.scores.r_overlay, s.scores.r_text)};
    for (auto& p : check_row(row)) problems.push_back(std::move(p));
    if (s.scores.skipped && (s.scores.r_dos != 0 || s.scores.r_slack != 0 || s.scores.r_text != 0 ||
                             s.scores.r_overlay != 0)) {
      problems.push_back(s.path + ": skipped sample carries non-zero ratios");
    }
  }
  for (const auto& row : summary_rows(report)) {
    for (auto& p : check_row(row)) problems.push_back(std::move(p));
  }
  const auto& d = report.dataset;
  if (d.aggregate != aggregate_of(d.mean_r_dos, d.mean_r_slack, d.mean_r_overlay, d.mean_r_text)) {
    problems.push_back("dataset aggregate is not mean_r_text - (mean_r_dos + mean_r_slack + mean_r_overlay)");
  }

  AnalysisReport again = report;
  try {
    rescore(again);
    if (!(again.dataset == report.dataset)) problems.push_back("dataset score differs from recomputation");
    auto same_row = [](const std::optional<ClassRow>& a, const std::optional<ClassRow>& b) {
      if (a.has_value() != b.has_value()) return false;
      return !a || (a->label == b->label && a->score == b->score);
    };
    if (!same_row(again.classes.goodware, report.classes.goodware) ||
        !same_row(again.classes.malware, report.classes.malware)) {
      problems.push_back("class table differs from recomputation");
    }
  } catch (const Error& e) {
    problems.push_back(std::string("cannot recompute scores: ") + e.what());
  }
  if (report.corpus.n_parsed + report.corpus.n_rejected != report.corpus.n_total) {
    problems.push_back("corpus counts do not add up");
  }
  return problems;
}

std::vector<double> BinnedAttribution::means() const {
  std::vector<double> out(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] > 0) out[b] = sum[b] / static_cast<double>(count[b]);
  }
  return out;
}

BinAccumulator::BinAccumulator(std::size_t n_bins, std::uint64_t window) {
  if (n_bins == 0) throw Error(ErrorCode::InvalidConfig, "need at least one bin");
  if (window == 0) throw Error(ErrorCode::InvalidConfig, "window must be positive");
  bins_.n_bins = n_bins;
  bins_.window = window;
  bins_.width = (window + n_bins - 1) / n_bins;
  bins_.sum.assign(n_bins, 0.0);
  bins_.count.assign(n_bins, 0);
}

void BinAccumulator::add(std::span<const double> values) {
  const std::uint64_t n = std::min<std::uint64_t>(values.size(), bins_.window);
  for (std::size_t b = 0; b < bins_.n_bins; ++b) {
    const std::uint64_t lo = b * bins_.width;
    if (lo >= n) break;
    const std::uint64_t hi = std::min<std::uint64_t>(lo + bins_.width, n);
    double s = 0.0;
    for (std::uint64_t i = lo; i < hi; ++i) s += values[i];
    bins_.sum[b] += s;
    bins_.count[b] += hi - lo;
  }
}

void BinAccumulator::merge(const BinAccumulator& other) {
  if (other.bins_.n_bins != bins_.n_bins || other.bins_.window != bins_.window) {
    throw Error(ErrorCode::ShapeMismatch, "cannot merge bins of different layouts");
  }
  for (std::size_t b = 0; b < bins_.n_bins; ++b) {
    bins_.sum[b] += other.bins_.sum[b];
    bins_.count[b] += other.bins_.count[b];
  }
}

BinnedAttribution bin_attributions(std::span<const std::vector<double>> attrs, std::size_t n_bins,
                                   std::uint64_t window) {
  BinAccumulator acc(n_bins, window);
  for (const auto& a : attrs) acc.add(a);
  return acc.result();
}

std::string bins_csv(const BinnedAttribution& bins) {
  std::string out = "bin_start,bin_end,mean_attr\n";
  const auto means = bins.means();
  for (std::size_t b = 0; b < bins.n_bins; ++b) {
    const std::uint64_t lo = std::min<std::uint64_t>(b * bins.width, bins.window);
    const std::uint64_t hi = std::min<std::uint64_t>(lo + bins.width, bins.window);
    out += std::to_string(lo) + "," + std::to_string(hi) + "," + fmt17(means[b]) + "\n";
  }
  return out;
}

}  // namespace spurscan
