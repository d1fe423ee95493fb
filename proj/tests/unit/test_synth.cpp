#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "helpers.hpp"
#include "spurscan/error.hpp"
#include "spurscan/synth.hpp"

using namespace spurscan;

namespace {

ErrorCode spec_error(const FixtureSpec& spec) {
  try {
    make_fixture(spec, 0);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("fixture accepted");
  return ErrorCode::BadReport;
}

bool inside(const std::vector<ByteInterval>& ivs, std::uint64_t start, std::uint64_t end) {
  return std::any_of(ivs.begin(), ivs.end(), [&](const ByteInterval& iv) { return iv.start <= start && end <= iv.end; });
}

}  // namespace

TEST_CASE("fixtures are deterministic and parse back to their layout") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    auto spec = testing::random_fixture_spec(rng);
    const auto seed = rng();
    auto a = make_fixture(spec, seed);
    CHECK(a == make_fixture(spec, seed));
    CHECK(a.size() == spec.file_len());
    auto parsed = parse_pe(a);
    auto expected = layout_of(spec);
    CHECK(parsed.e_lfanew == expected.e_lfanew);
    CHECK(parsed.size_of_headers == expected.size_of_headers);
    REQUIRE(parsed.sections.size() == expected.sections.size());
    for (std::size_t i = 0; i < parsed.sections.size(); ++i) {
      CHECK(parsed.sections[i].ptr_raw == expected.sections[i].ptr_raw);
      CHECK(parsed.sections[i].size_raw == expected.sections[i].size_raw);
      CHECK(parsed.sections[i].virtual_size == expected.sections[i].virtual_size);
    }
  }
}

TEST_CASE("toy template layout") {
  auto spec = FixtureSpec::toy_template();
  CHECK(spec.file_len() == 3584);
  auto map = region_map(layout_of(spec));
  // Trailing slack of both sections plus the gap between them.
  CHECK(inside(map.slack, 0x700, 0x800));
  CHECK(inside(map.slack, 0x800, 0x880));
  CHECK(inside(map.slack, 0xB80, 0xC00));
  REQUIRE(map.code_section_index.has_value());
  CHECK(*map.code_section_index == 0);
  CHECK(map.overlay == std::vector<ByteInterval>{{0xC00, 0xE00}});

  auto bytes = make_fixture(spec, 3);
  for (const auto& iv : map.slack) {
    for (auto i = iv.start; i < iv.end; ++i) REQUIRE(bytes[i] == 0);
  }
}

TEST_CASE("low-entropy fill uses a small alphabet disjoint from the marker") {
  auto spec = FixtureSpec::toy_template();
  auto bytes = make_fixture(spec, 11);
  auto map = region_map(layout_of(spec));
  std::set<std::uint8_t> seen;
  for (const auto& iv : map.content[0]) {
    for (auto i = iv.start; i < iv.end; ++i) seen.insert(bytes[i]);
  }
  CHECK(seen.size() <= 8);
  CHECK(seen.size() >= 4);
  for (auto m : kDefaultMarker) CHECK(seen.count(m) == 0);
}

TEST_CASE("planting with p = 1") {
  auto tmpl = FixtureSpec::toy_template();
  for (auto region : {RegionKind::Slack, RegionKind::Code, RegionKind::Overlay, RegionKind::Dos}) {
    PlantSpec plant;
    plant.region = region;
    auto data = gen_dataset(20, tmpl, plant, 5);
    REQUIRE(data.size() == 40);
    CHECK(data[0].name == "goodware_0000.exe");
    CHECK(data[39].name == "malware_0019.exe");
    for (const auto& s : data) {
      CHECK(s.has_marker == (s.label == Label::Malware));
      if (!s.has_marker) continue;
      const auto map = region_map(parse_pe(s.bytes));
      CHECK(inside(map.intervals(region), s.marker_offset, s.marker_offset + kDefaultMarker.size()));
      CHECK(std::equal(kDefaultMarker.begin(), kDefaultMarker.end(),
                       s.bytes.begin() + static_cast<std::ptrdiff_t>(s.marker_offset)));
    }
    CHECK(gen_dataset(20, tmpl, plant, 5)[25].bytes == data[25].bytes);
  }
}

TEST_CASE("planting with p = 0.5 hits both classes") {
  PlantSpec plant;
  plant.p = 0.5;
  auto data = gen_dataset(200, FixtureSpec::toy_template(), plant, 9);
  std::size_t good = 0, mal = 0;
  for (const auto& s : data) (s.label == Label::Malware ? mal : good) += s.has_marker;
  CHECK(good > 70);
  CHECK(good < 130);
  CHECK(mal > 70);
  CHECK(mal < 130);
}

TEST_CASE("inconsistent specs") {
  auto low = FixtureSpec::example();
  low.e_lfanew = 0x20;
  CHECK(spec_error(low) == ErrorCode::InconsistentSpec);

  auto overlap = FixtureSpec::example();
  overlap.sections.push_back({".data", 0x300, 0x200, 0x200, false});
  CHECK(spec_error(overlap) == ErrorCode::InconsistentSpec);

  auto into_headers = FixtureSpec::example();
  into_headers.sections[0].ptr_raw = 0x100;
  CHECK(spec_error(into_headers) == ErrorCode::InconsistentSpec);

  auto long_name = FixtureSpec::example();
  long_name.sections[0].name = ".textbiggg";
  CHECK(spec_error(long_name) == ErrorCode::InconsistentSpec);

  PlantSpec plant;
  plant.region = RegionKind::Overlay;
  auto no_overlay = FixtureSpec::toy_template();
  no_overlay.overlay_len = 8;
  CHECK_THROWS_AS(gen_dataset(2, no_overlay, plant, 0), Error);
  plant.p = 0.3;
  CHECK_THROWS_AS(gen_dataset(2, FixtureSpec::toy_template(), plant, 0), Error);
  CHECK_THROWS_AS(gen_dataset(0, FixtureSpec::toy_template(), PlantSpec{}, 0), Error);
}
