#include "spurscan/corpus.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <set>

#include "spurscan/error.hpp"
#include "spurscan/parallel.hpp"

namespace spurscan {

namespace {

// Splits one CSV record. Quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::uint64_t size_bucket(std::uint64_t size) { return size <= 1 ? 1 : std::bit_ceil(size); }

}  // namespace

CorpusManifest load_manifest(std::string_view csv, const std::filesystem::path& base_dir) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    std::string_view line = csv.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  if (lines.empty() || lines.front() != "path,label,family") {
    throw Error(ErrorCode::BadHeader, "manifest must start with the header 'path,label,family'");
  }

  CorpusManifest manifest;
  std::set<std::filesystem::path> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = split_csv_line(lines[i]);
    if (fields.size() < 2 || fields.size() > 3) {
      throw Error(ErrorCode::BadHeader, "line " + std::to_string(i + 1) + " has " +
                                            std::to_string(fields.size()) + " fields, expected 3");
    }
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative() && !base_dir.empty()) e.path = base_dir / e.path;
    e.path = e.path.lexically_normal();
    const auto label = label_from_string(fields[1]);
    if (!label) {
      throw Error(ErrorCode::BadLabel, "line " + std::to_string(i + 1) + ": unknown label '" + fields[1] + "'");
    }
    e.label = *label;
    if (fields.size() == 3 && !fields[2].empty()) e.family = fields[2];
    if (!seen.insert(e.path).second) {
      throw Error(ErrorCode::DuplicatePath, "line " + std::to_string(i + 1) + ": " + e.path.string());
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

CorpusManifest load_manifest_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return load_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                       path.parent_path());
}

CorpusManifest manifest_from_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  CorpusManifest manifest;
  for (Label label : {Label::Goodware, Label::Malware}) {
    const fs::path root = dir / std::string(to_string(label));
    if (!fs::is_directory(root)) continue;
    for (const auto& item : fs::recursive_directory_iterator(root)) {
      if (!item.is_regular_file()) continue;
      ManifestEntry e;
      e.path = item.path().lexically_normal();
      e.label = label;
      const fs::path rel = item.path().lexically_relative(root);
      if (std::distance(rel.begin(), rel.end()) > 1) e.family = rel.begin()->string();
      manifest.entries.push_back(std::move(e));
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return manifest;
}

std::string manifest_to_csv(const CorpusManifest& manifest, const std::filesystem::path& relative_to) {
  std::string out = "path,label,family\n";
  for (const auto& e : manifest.entries) {
    const auto p = relative_to.empty() ? e.path : e.path.lexically_relative(relative_to);
    out += csv_field(p.generic_string()) + "," + std::string(to_string(e.label)) + "," +
           csv_field(e.family.value_or("")) + "\n";
  }
  return out;
}

CorpusStats corpus_stats(std::span<const ScannedFile> files, std::span<const std::uint64_t> windows) {
  CorpusStats stats;
  stats.n_total = files.size();
  for (auto w : windows) stats.n_over_window[w] = 0;
  for (const auto& f : files) {
    if (f.status != ScanStatus::Parsed) {
      ++stats.n_rejected;
      continue;
    }
    ++stats.n_parsed;
    ++stats.size_histogram[size_bucket(f.size)];
    for (auto w : windows) {
      if (f.size > w) ++stats.n_over_window[w];
    }
  }
  return stats;
}

ScanResult scan(const CorpusManifest& manifest, std::span<const std::uint64_t> windows, std::size_t threads) {
  ScanResult result;
  result.files.resize(manifest.entries.size());
  parallel_for(manifest.entries.size(), threads, [&](std::size_t i) {
    ScannedFile& f = result.files[i];
    f.entry = manifest.entries[i];
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file(f.entry.path);
    } catch (const Error& e) {
      f.status = ScanStatus::IoError;
      f.error = e.what();
      return;
    }
    f.size = bytes.size();
    try {
      f.map = region_map(parse_pe(bytes));
    } catch (const Error& e) {
      f.status = ScanStatus::Rejected;
      f.error = e.what();
    }
  });
  result.stats = corpus_stats(result.files, windows);
  return result;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace spurscan
