#include <doctest.h>

#include <filesystem>

#include "spurscan/corpus.hpp"
#include "spurscan/error.hpp"
#include "spurscan/synth.hpp"

using namespace spurscan;
namespace fs = std::filesystem;

namespace {

ErrorCode manifest_error(std::string_view csv) {
  try {
    load_manifest(csv);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("manifest accepted");
  return ErrorCode::BadReport;
}

struct TempDir {
  fs::path path;
  explicit TempDir(std::string_view name)
      : path(fs::temp_directory_path() / ("spurscan_test_" + std::string(name))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Valid PE of exactly `len` bytes (padding goes to the overlay).
std::vector<std::uint8_t> pe_of_size(std::uint64_t len) {
  auto spec = FixtureSpec::example();
  spec.fill = {Fill::Zero, Fill::Zero, Fill::Zero, Fill::Zero};
  spec.overlay_len = len - (spec.file_len() - spec.overlay_len);
  auto bytes = make_fixture(spec, 0);
  REQUIRE(bytes.size() == len);
  return bytes;
}

}  // namespace

TEST_CASE("manifest parsing") {
  auto m = load_manifest("path,label,family\na.exe,goodware,\n\"b, c.exe\",malware,\"zeus\"\n", "/data");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].path == fs::path("/data/a.exe"));
  CHECK(m.entries[0].label == Label::Goodware);
  CHECK_FALSE(m.entries[0].family.has_value());
  CHECK(m.entries[1].path == fs::path("/data/b, c.exe"));
  CHECK(m.entries[1].label == Label::Malware);
  CHECK(m.entries[1].family == "zeus");

  auto abs = load_manifest("path,label,family\n/x/y.exe,malware,\n", "/data");
  CHECK(abs.entries[0].path == fs::path("/x/y.exe"));

  auto crlf = load_manifest("path,label,family\r\na.exe,goodware,\r\n");
  CHECK(crlf.entries.size() == 1);
}

TEST_CASE("manifest errors") {
  CHECK(manifest_error("") == ErrorCode::BadHeader);
  CHECK(manifest_error("file,label,family\n") == ErrorCode::BadHeader);
  CHECK(manifest_error("path,label,family\na.exe,benignware,\n") == ErrorCode::BadLabel);
  CHECK(manifest_error("path,label,family\na.exe,goodware,\na.exe,malware,\n") == ErrorCode::DuplicatePath);
}

TEST_CASE("manifest csv round trip") {
  auto m = load_manifest("path,label,family\na.exe,goodware,\n\"q\"\"uote.exe\",malware,fam\n", "/base");
  auto again = load_manifest(manifest_to_csv(m, "/base"), "/base");
  REQUIRE(again.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(again.entries[i].path == m.entries[i].path);
    CHECK(again.entries[i].label == m.entries[i].label);
    CHECK(again.entries[i].family == m.entries[i].family);
  }
}

TEST_CASE("scan statistics") {
  TempDir dir("scan");
  const std::uint64_t sizes[] = {50'000, 150'000, 2'000'000};
  CorpusManifest m;
  for (std::size_t i = 0; i < 3; ++i) {
    auto p = dir.path / ("f" + std::to_string(i) + ".exe");
    write_file(p, pe_of_size(sizes[i]));
    m.entries.push_back({p, i == 2 ? Label::Malware : Label::Goodware, {}});
  }
  auto not_pe = dir.path / "notes.txt";
  write_text(not_pe, "hello, not an executable");
  m.entries.push_back({not_pe, Label::Goodware, {}});
  m.entries.push_back({dir.path / "missing.exe", Label::Malware, {}});

  const std::uint64_t windows[] = {102'400, 1'048'576};
  auto r = scan(m, windows);
  CHECK(r.stats.n_total == 5);
  CHECK(r.stats.n_parsed == 3);
  CHECK(r.stats.n_rejected == 2);
  CHECK(r.stats.n_over_window.at(102'400) == 2);
  CHECK(r.stats.n_over_window.at(1'048'576) == 1);
  CHECK(r.stats.size_histogram.at(65'536) == 1);
  CHECK(r.stats.size_histogram.at(262'144) == 1);
  CHECK(r.stats.size_histogram.at(2'097'152) == 1);
  CHECK(r.files[3].status == ScanStatus::Rejected);
  CHECK_FALSE(r.files[3].error.empty());
  CHECK_FALSE(r.files[3].map.has_value());
  CHECK(r.files[4].status == ScanStatus::IoError);
  CHECK(r.files[0].map.has_value());
  CHECK(r.files[0].size == 50'000);

  CHECK(corpus_stats(r.files, windows) == r.stats);
  CHECK(scan(m, windows, 4).stats == r.stats);
}

TEST_CASE("empty corpus") {
  const std::uint64_t windows[] = {102'400};
  auto r = scan(CorpusManifest{}, windows);
  CHECK(r.files.empty());
  CHECK(r.stats.n_total == 0);
  CHECK(r.stats.n_parsed == 0);
  CHECK(r.stats.n_rejected == 0);
  CHECK(r.stats.n_over_window.at(102'400) == 0);
}

TEST_CASE("manifest from directory") {
  TempDir dir("tree");
  fs::create_directories(dir.path / "malware" / "fam1");
  fs::create_directories(dir.path / "goodware");
  write_text(dir.path / "goodware" / "b.exe", "x");
  write_text(dir.path / "goodware" / "a.exe", "x");
  write_text(dir.path / "malware" / "fam1" / "c.exe", "x");
  write_text(dir.path / "malware" / "d.exe", "x");
  auto m = manifest_from_directory(dir.path);
  REQUIRE(m.entries.size() == 4);
  CHECK(std::is_sorted(m.entries.begin(), m.entries.end(),
                       [](const auto& a, const auto& b) { return a.path < b.path; }));
  CHECK(m.entries[0].path.filename() == "a.exe");
  CHECK(m.entries[0].label == Label::Goodware);
  CHECK(m.entries[2].path.filename() == "d.exe");
  CHECK(m.entries[2].label == Label::Malware);
  CHECK_FALSE(m.entries[2].family.has_value());
  CHECK(m.entries[3].path.filename() == "c.exe");
  CHECK(m.entries[3].family == "fam1");
}

TEST_CASE("read_file on a missing path") {
  try {
    read_file("/nonexistent/spurscan/file");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
}
