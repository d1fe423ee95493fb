// spurscan: measure how much a byte-level malware detector relies on
// spurious PE regions (DOS area, slack, overlay) versus code.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "spurscan/analyze.hpp"
#include "spurscan/corpus.hpp"
#include "spurscan/error.hpp"
#include "spurscan/gradcheck.hpp"
#include "spurscan/parallel.hpp"
#include "spurscan/pe.hpp"
#include "spurscan/report.hpp"
#include "spurscan/synth.hpp"
#include "spurscan/train.hpp"
#include "spurscan/weights_io.hpp"

namespace fs = std::filesystem;
using namespace spurscan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitSpurious = 2;
constexpr double kGradTolerance = 5e-3;

void log_line(std::string_view msg) { std::cerr << "[spurscan] " << msg << "\n"; }

std::string read_text(const fs::path& p) {
  const auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

void print_table(const std::vector<TableRow>& rows) {
  std::printf("%-12s %-9s %8s %8s %8s %8s %10s\n", "model", "data", "DOS", "Slack", ".text", "Overlay", "Aggregate");
  for (const auto& r : rows) {
    std::printf("%-12s %-9s %8.4f %8.4f %8.4f %8.4f %10.4f\n", r.model.c_str(), r.data.c_str(), r.dos, r.slack,
                r.text, r.overlay, r.aggregate);
  }
}

int verdict(double aggregate) {
  if (aggregate > 0) {
    std::printf("aggregate %.4f > 0: relevance concentrates on code\n", aggregate);
    return kExitOk;
  }
  std::printf("aggregate %.4f <= 0: spurious-dominated\n", aggregate);
  return kExitSpurious;
}

CorpusManifest manifest_for(const std::optional<fs::path>& manifest, const std::optional<fs::path>& dir) {
  if (manifest) return load_manifest_file(*manifest);
  if (fs::exists(*dir / "manifest.csv")) return load_manifest_file(*dir / "manifest.csv");
  return manifest_from_directory(*dir);
}

// ---- map ----------------------------------------------------------------

struct MapArgs {
  fs::path file;
  bool json = false;
};

int cmd_map(const MapArgs& a) {
  const auto bytes = read_file(a.file);
  const RegionMap map = region_map(parse_pe(bytes));
  if (a.json) {
    nlohmann::ordered_json j;
    j["file_len"] = map.file_len;
    j["malformed"] = map.malformed;
    j["regions"] = nlohmann::ordered_json::array();
    for (const auto& l : map.labeled()) {
      j["regions"].push_back({{"kind", to_string(l.kind)}, {"start", l.interval.start}, {"end", l.interval.end}});
    }
    j["code_section"] = map.code_section_index ? nlohmann::ordered_json(*map.code_section_index) : nullptr;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  std::cout << "file_len " << map.file_len << "\n";
  std::cout << "malformed " << (map.malformed ? "yes" : "no") << "\n";
  std::cout << "code_section " << (map.code_section_index ? std::to_string(*map.code_section_index) : "none") << "\n";
  for (const auto& l : map.labeled()) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %12llu %12llu  (%llu bytes)", std::string(to_string(l.kind)).c_str(),
                  static_cast<unsigned long long>(l.interval.start), static_cast<unsigned long long>(l.interval.end),
                  static_cast<unsigned long long>(l.interval.size()));
    std::cout << line << "\n";
  }
  return kExitOk;
}

// ---- analyze ------------------------------------------------------------

struct AnalyzeArgs {
  fs::path weights;
  std::string arch;
  std::optional<fs::path> corpus;
  std::optional<fs::path> input;
  std::size_t steps = 50;
  std::string target = "score";
  fs::path out = "report.json";
  std::optional<fs::path> summary;
  std::size_t bins = 200;
  std::optional<fs::path> bins_out;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
  ModelFile model = read_model_file(a.weights);
  if (!a.arch.empty()) {
    const auto arch = arch_from_string(a.arch);
    if (!arch) throw Error(ErrorCode::InvalidConfig, "unknown --arch " + a.arch);
    if (*arch != model.config.arch) {
      throw Error(ErrorCode::ManifestMismatch, "weight file holds a " + std::string(to_string(model.config.arch)) +
                                                   " model, --arch says " + a.arch);
    }
  }
  AnalyzeOptions opts;
  opts.ig.steps = a.steps;
  opts.ig.target = *target_from_string(a.target);
  opts.n_bins = a.bins;
  opts.threads = resolve_threads(a.threads);
  opts.model_id = a.weights.stem().string();
  opts.log = log_line;

  const CorpusManifest manifest = manifest_for(a.corpus, a.input);
  log_line("analyzing " + std::to_string(manifest.entries.size()) + " files with " +
           std::to_string(opts.threads) + " threads");
  const AnalysisResult result = analyze(model.config, model.weights, manifest, opts);

  write_text(a.out, emit_json(result.report));
  const auto rows = summary_rows(result.report);
  if (a.summary) write_text(*a.summary, summary_csv(rows));
  const fs::path bins_path = a.bins_out ? *a.bins_out : a.out.parent_path() / "bins.csv";
  write_text(bins_path, bins_csv(result.bins));

  const auto& d = result.report.dataset;
  log_line(std::to_string(d.n_samples) + " scored, " + std::to_string(d.n_skipped) + " skipped, " +
           std::to_string(result.report.rejected.size()) + " rejected");
  print_table(rows);
  return verdict(d.aggregate);
}

// ---- score --------------------------------------------------------------

int cmd_score(const fs::path& report_path) {
  AnalysisReport report = parse_report(read_text(report_path));
  const auto problems = validate_report(report);
  for (const auto& p : problems) log_line("invalid report: " + p);
  if (!problems.empty()) return kExitError;
  rescore(report);
  print_table(summary_rows(report));
  return verdict(report.dataset.aggregate);
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
  std::string arch = "malconv";
  std::uint64_t seed = 0;
  std::size_t window = 256;
  std::string target = "score";
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto arch = arch_from_string(a.arch);
  if (!arch) throw Error(ErrorCode::InvalidConfig, "unknown --arch " + a.arch);
  const ModelConfig cfg = *arch == Arch::MalConv ? ModelConfig::malconv_small(a.window) : ModelConfig::bbdnn_small(a.window);
  GradcheckOptions opts;
  opts.target = *target_from_string(a.target);
  const GradcheckReport r = gradcheck(cfg, a.seed, opts);
  std::printf("arch %s window %zu seed %llu target %s\n", std::string(to_string(cfg.arch)).c_str(), cfg.window,
              static_cast<unsigned long long>(a.seed), a.target.c_str());
  std::printf("input  cells %4zu  max rel err %.3e\n", r.input_checked, r.max_rel_err_input);
  std::printf("params       %4zu  max rel err %.3e\n", r.params_checked, r.max_rel_err_params);
  std::printf("kinks skipped %zu\n", r.kinks_skipped);
  const bool ok = r.max_rel_err_input <= kGradTolerance && r.max_rel_err_params <= kGradTolerance;
  std::printf("%s (tolerance %.0e)\n", ok ? "PASS" : "FAIL", kGradTolerance);
  return ok ? kExitOk : kExitError;
}

// ---- synth --------------------------------------------------------------

struct SynthArgs {
  std::string plant = "slack";
  double p = 1.0;
  std::size_t n = 100;
  fs::path out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  const auto region = region_kind_from_string(a.plant);
  if (!region || *region == RegionKind::PeHeaders || *region == RegionKind::Content) {
    throw Error(ErrorCode::InvalidConfig, "--plant must be one of dos, slack, overlay, code");
  }
  PlantSpec plant;
  plant.region = *region;
  plant.p = a.p;
  const auto samples = gen_dataset(a.n, FixtureSpec::toy_template(), plant, a.seed);

  CorpusManifest manifest;
  for (const auto& s : samples) {
    const fs::path dir = a.out / std::string(to_string(s.label));
    fs::create_directories(dir);
    write_file(dir / s.name, s.bytes);
    manifest.entries.push_back({dir / s.name, s.label, std::nullopt});
  }
  write_text(a.out / "manifest.csv", manifest_to_csv(manifest, a.out));
  log_line("wrote " + std::to_string(samples.size()) + " files to " + a.out.string());
  return kExitOk;
}

// ---- train-toy ----------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path corpus;
  fs::path out;
  TrainOptions opts;
};

int cmd_train_toy(const TrainArgs& a) {
  const ModelConfig cfg = config_from_json(read_text(a.config));
  const CorpusManifest manifest = manifest_for(std::nullopt, a.corpus);
  std::vector<std::vector<std::uint8_t>> files;
  std::vector<TrainingExample> data;
  files.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) files.push_back(read_file(e.path));
  for (std::size_t i = 0; i < files.size(); ++i) data.push_back({files[i], manifest.entries[i].label});

  const TrainResult r = train_toy(cfg, data, a.opts);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    log_line("epoch " + std::to_string(e + 1) + " loss " + std::to_string(r.epoch_loss[e]));
  }
  write_model_file(a.out, cfg, r.weights);
  std::printf("training accuracy %.4f over %zu files\n", r.accuracy, data.size());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spurscan: quantify spurious-region reliance of byte-level malware detectors"};
  app.require_subcommand(1);

  MapArgs map_args;
  auto* map = app.add_subcommand("map", "print the PE region map of a file");
  map->add_option("file", map_args.file, "PE file")->required()->check(CLI::ExistingFile);
  map->add_flag("--json", map_args.json, "emit JSON");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "run Integrated Gradients over a corpus and score it");
  analyze_cmd->add_option("--weights", an.weights, "model weight file (.spurw)")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--arch", an.arch, "expected architecture (malconv|bbdnn)");
  auto* corpus_opt = analyze_cmd->add_option("--corpus", an.corpus, "manifest CSV (path,label,family)");
  auto* input_opt = analyze_cmd->add_option("--input", an.input, "directory with goodware/ and malware/ subdirectories");
  corpus_opt->excludes(input_opt);
  analyze_cmd->add_option("--steps", an.steps, "IG interpolation steps")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--target", an.target, "attribution target")->check(CLI::IsMember({"score", "logit"}));
  analyze_cmd->add_option("--out", an.out, "report JSON path");
  analyze_cmd->add_option("--summary", an.summary, "Table-style CSV summary path");
  analyze_cmd->add_option("--bins", an.bins, "number of attribution bins")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--bins-out", an.bins_out, "binned attribution CSV (default: bins.csv next to --out)");
  analyze_cmd->add_option("--threads", an.threads, "worker threads (0 = all cores; SPURSCAN_THREADS overrides)");
  analyze_cmd->add_option("--seed", an.seed, "seed (the analysis itself is deterministic)");

  std::string report_path;
  auto* score = app.add_subcommand("score", "validate a report and print its table");
  score->add_option("report", report_path, "report JSON")->required()->check(CLI::ExistingFile);

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the backward passes");
  grad->add_option("--arch", gc.arch, "malconv|bbdnn")->check(CLI::IsMember({"malconv", "bbdnn"}));
  grad->add_option("--seed", gc.seed, "random seed");
  grad->add_option("--window", gc.window, "input window of the small test model");
  grad->add_option("--target", gc.target, "differentiated output")->check(CLI::IsMember({"score", "logit"}));

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a planted-correlation PE corpus");
  synth->add_option("--plant", sy.plant, "region holding the marker")->check(CLI::IsMember({"dos", "slack", "overlay", "code"}));
  synth->add_option("--p", sy.p, "correlation strength in [0.5, 1]")->check(CLI::Range(0.5, 1.0));
  synth->add_option("--n", sy.n, "files per class")->check(CLI::PositiveNumber);
  synth->add_option("--out", sy.out, "output directory")->required();
  synth->add_option("--seed", sy.seed, "random seed");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-toy", "train a small model on a corpus directory");
  train->add_option("--config", tr.config, "model config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--corpus", tr.corpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", tr.out, "output weight file")->required();
  train->add_option("--epochs", tr.opts.epochs, "epochs");
  train->add_option("--lr", tr.opts.lr, "learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--batch", tr.opts.batch, "mini-batch size")->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", tr.opts.weight_decay, "L2 penalty on weights")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", tr.opts.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*map) return cmd_map(map_args);
    if (*analyze_cmd) {
      if (!an.corpus && !an.input) throw Error(ErrorCode::InvalidConfig, "analyze needs --corpus or --input");
      return cmd_analyze(an);
    }
    if (*score) return cmd_score(report_path);
    if (*grad) return cmd_gradcheck(gc);
    if (*synth) return cmd_synth(sy);
    if (*train) return cmd_train_toy(tr);
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kExitError;
  }
  return kExitError;
}
