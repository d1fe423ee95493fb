#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spurscan/pe.hpp"
#include "spurscan/scoring.hpp"

namespace spurscan {

struct ManifestEntry {
  std::filesystem::path path;
  Label label = Label::Goodware;
  std::optional<std::string> family;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
};

/// Parses a CSV with header `path,label,family`. Fields may be quoted with
/// double quotes; the family column may be empty. Relative paths are
/// resolved against `base_dir`. Throws Error{BadHeader},
/// Error{DuplicatePath} or Error{BadLabel}.
CorpusManifest load_manifest(std::string_view csv, const std::filesystem::path& base_dir = {});
CorpusManifest load_manifest_file(const std::filesystem::path& path);

/// Builds a manifest from `<dir>/{goodware,malware}/[<family>/]file`.
/// Entries are sorted by path.
CorpusManifest manifest_from_directory(const std::filesystem::path& dir);

std::string manifest_to_csv(const CorpusManifest& manifest, const std::filesystem::path& relative_to = {});

enum class ScanStatus { Parsed, Rejected, IoError };

struct ScannedFile {
  ManifestEntry entry;
  std::uint64_t size = 0;
  ScanStatus status = ScanStatus::Parsed;
  std::string error;               // set when not Parsed
  std::optional<RegionMap> map;    // set when Parsed
};

struct CorpusStats {
  std::size_t n_total = 0;
  std::size_t n_parsed = 0;
  std::size_t n_rejected = 0;  // parse failures and unreadable files
  /// For each model window, how many parsed files are strictly larger.
  std::map<std::uint64_t, std::size_t> n_over_window;
  /// Parsed file sizes bucketed by the next power of two (bucket upper bound).
  std::map<std::uint64_t, std::size_t> size_histogram;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

struct ScanResult {
  std::vector<ScannedFile> files;  // manifest order
  CorpusStats stats;
};

/// Reads and parses every file. Failures are recorded per file and never
/// abort the batch.
ScanResult scan(const CorpusManifest& manifest, std::span<const std::uint64_t> windows,
                std::size_t threads = 1);

/// Recomputes CorpusStats from per-file results.
CorpusStats corpus_stats(std::span<const ScannedFile> files, std::span<const std::uint64_t> windows);

/// Reads a whole file. Throws Error{IoError}.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace spurscan
