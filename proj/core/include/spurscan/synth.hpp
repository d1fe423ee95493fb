#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spurscan/pe.hpp"
#include "spurscan/scoring.hpp"

namespace spurscan {

/// Zero: all 0x00. Random: uniform bytes. LowEntropy: uniform over a small
/// fixed alphabet of common x86 opcode bytes (none of them in kDefaultMarker),
/// so files share most of their short byte windows.
enum class Fill { Zero, Random, LowEntropy };

struct FillPolicy {
  Fill dos_stub = Fill::Random;
  Fill content = Fill::Random;
  Fill slack = Fill::Random;
  Fill overlay = Fill::Random;
};

struct SectionSpec {
  std::string name;
  std::uint32_t ptr_raw = 0;
  std::uint32_t size_raw = 0;
  std::uint32_t virtual_size = 0;
  bool executable = false;
};

/// Layout of a minimal PE32 image. Section raw spans must lie at or after
/// `size_of_headers` and must not overlap each other.
struct FixtureSpec {
  std::uint32_t e_lfanew = 0x80;
  std::uint32_t size_of_headers = 0x200;
  std::vector<SectionSpec> sections;
  std::uint64_t overlay_len = 0;
  FillPolicy fill;

  /// e_lfanew 0x80, headers to 0x200, one executable section
  /// {ptr 0x200, raw 0x200, virtual 0x180}, 0x100 overlay bytes (0x500 total).
  static FixtureSpec example();
  /// Template used for planted-correlation datasets: .text and .data each
  /// with trailing slack, a 0x80 gap between them, and an overlay. 3584 bytes.
  /// Slack is zero-filled like compiler padding; everything else is LowEntropy.
  static FixtureSpec toy_template();

  std::uint64_t file_len() const noexcept;
};

/// The layout `spec` describes, built without touching any bytes.
PeLayout layout_of(const FixtureSpec& spec);

/// Writes a valid minimal PE. Throws Error{InconsistentSpec}.
std::vector<std::uint8_t> make_fixture(const FixtureSpec& spec, std::uint64_t seed);

inline constexpr std::array<std::uint8_t, 16> kDefaultMarker = {
    0xDE, 0xAD, 0xBE, 0xEF, 0x53, 0x50, 0x55, 0x52, 0x49, 0x4F, 0x55, 0x53, 0xCA, 0xFE, 0xF0, 0x0D};

/// Plants `marker` into `region` of files of class `correlated` with
/// probability `p`, and into the other class with probability 1 - p.
struct PlantSpec {
  RegionKind region = RegionKind::Slack;
  std::array<std::uint8_t, 16> marker = kDefaultMarker;
  Label correlated = Label::Malware;
  double p = 1.0;
};

struct SyntheticSample {
  std::string name;  // e.g. "malware_0007.exe"
  Label label = Label::Goodware;
  bool has_marker = false;
  std::uint64_t marker_offset = 0;
  std::vector<std::uint8_t> bytes;
};

/// `n_per_class` goodware then `n_per_class` malware files. Per-file seeds
/// are drawn sequentially from `seed`, so output is byte-for-byte
/// reproducible. Throws Error{InconsistentSpec}.
std::vector<SyntheticSample> gen_dataset(std::size_t n_per_class, const FixtureSpec& tmpl,
                                         const PlantSpec& plant, std::uint64_t seed);

}  // namespace spurscan
