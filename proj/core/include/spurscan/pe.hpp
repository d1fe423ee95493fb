#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spurscan {

/// Half-open byte range [start, end) in raw file offsets.
struct ByteInterval {
  std::uint64_t start = 0;
  std::uint64_t end = 0;

  std::uint64_t size() const noexcept { return end > start ? end - start : 0; }
  bool empty() const noexcept { return end <= start; }

  friend bool operator==(const ByteInterval&, const ByteInterval&) = default;
};

inline constexpr std::uint32_t kSectionExecutable = 0x20000000u;

struct SectionEntry {
  std::string name;  // up to 8 bytes, NUL padding stripped
  std::uint64_t ptr_raw = 0;
  std::uint64_t size_raw = 0;
  std::uint64_t virtual_size = 0;
  std::uint32_t characteristics = 0;

  bool is_executable() const noexcept { return (characteristics & kSectionExecutable) != 0; }
};

/// Header offsets and section table of one PE file. Section spans are
/// already clamped to `file_len`; `malformed` records whether anything had
/// to be clamped or was otherwise inconsistent.
struct PeLayout {
  std::uint64_t e_lfanew = 0;
  std::uint64_t size_of_headers = 0;
  std::vector<SectionEntry> sections;
  std::uint64_t file_len = 0;
  bool malformed = false;
};

/// Parses the DOS header, COFF header, optional header and section table.
/// Throws Error{NotPe} on a bad MZ/PE signature and Error{Truncated} when
/// the file is too short for a structure it claims to contain.
PeLayout parse_pe(std::span<const std::uint8_t> bytes);

enum class RegionKind {
  Dos,        // [0, e_lfanew): DOS header and stub
  PeHeaders,  // [e_lfanew, SizeOfHeaders): PE signature, COFF/optional headers, section table
  Content,    // initialized section data of every section
  Slack,      // mapped bytes claimed by nothing else
  Overlay,    // bytes after the last section's raw data
  Code,       // content of the first executable section (subset of Content)
};

inline constexpr RegionKind kPartitionKinds[] = {RegionKind::Dos, RegionKind::PeHeaders,
                                                 RegionKind::Content, RegionKind::Slack,
                                                 RegionKind::Overlay};

std::string_view to_string(RegionKind kind) noexcept;
std::optional<RegionKind> region_kind_from_string(std::string_view name) noexcept;

/// Disjoint, exhaustive partition of [0, file_len). Every list is sorted
/// and holds no empty intervals.
struct RegionMap {
  std::uint64_t file_len = 0;
  bool malformed = false;
  std::vector<ByteInterval> dos;
  std::vector<ByteInterval> pe_headers;
  std::vector<std::vector<ByteInterval>> content;  // one list per section, table order
  std::vector<ByteInterval> slack;
  std::vector<ByteInterval> overlay;
  std::optional<std::size_t> code_section_index;

  /// Sorted, merged intervals for one kind.
  std::vector<ByteInterval> intervals(RegionKind kind) const;

  struct Labeled {
    RegionKind kind;
    ByteInterval interval;
  };
  /// All partition intervals ordered by start offset. Content intervals
  /// are labeled Content (the code section is reported separately).
  std::vector<Labeled> labeled() const;
};

/// Index of the first section in table order with IMAGE_SCN_MEM_EXECUTE.
std::optional<std::size_t> code_section(const PeLayout& layout) noexcept;

RegionMap region_map(const PeLayout& layout);

/// Sorts and merges overlapping/adjacent intervals, dropping empty ones.
std::vector<ByteInterval> normalize(std::vector<ByteInterval> intervals);

/// Concatenates `attr` values whose positions fall inside `kind`'s
/// intervals, restricted to [0, min(window, attr.size())).
std::vector<double> select(std::span<const double> attr, const RegionMap& map, RegionKind kind,
                           std::uint64_t window);

/// Squared l2 norm of select(...) without materializing it. Accumulates in
/// position order so results match squared_norm(select(...)) bit-for-bit.
double selected_squared_norm(std::span<const double> attr, const RegionMap& map, RegionKind kind,
                             std::uint64_t window);

double squared_norm(std::span<const double> values) noexcept;

}  // namespace spurscan
