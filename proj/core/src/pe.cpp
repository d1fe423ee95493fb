#include "spurscan/pe.hpp"

#include <algorithm>
#include <map>

#include "spurscan/error.hpp"

namespace spurscan {

namespace {

constexpr std::uint64_t kDosHeaderSize = 0x40;
constexpr std::uint64_t kLfanewOffset = 0x3C;
constexpr std::uint64_t kCoffHeaderSize = 20;
constexpr std::uint64_t kSectionHeaderSize = 40;
// SizeOfHeaders sits at the same offset in PE32 and PE32+ optional headers.
constexpr std::uint64_t kSizeOfHeadersOffset = 60;
constexpr std::uint64_t kMinOptionalHeader = kSizeOfHeadersOffset + 4;

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::uint64_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::uint64_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void need(std::span<const std::uint8_t> b, std::uint64_t end, const char* what) {
  if (end > b.size()) {
    throw Error(ErrorCode::Truncated, std::string(what) + " extends past end of file (needs " +
                                          std::to_string(end) + " bytes, have " +
                                          std::to_string(b.size()) + ")");
  }
}

// Disjoint set of claimed byte ranges keyed by start offset.
class ClaimedSet {
 public:
  // Returns the parts of `iv` not yet claimed and claims them.
  std::vector<ByteInterval> claim(ByteInterval iv) {
    std::vector<ByteInterval> fresh;
    if (iv.empty()) return fresh;
    auto it = ranges_.upper_bound(iv.start);
    if (it != ranges_.begin()) --it;
    std::uint64_t cursor = iv.start;
    for (; it != ranges_.end() && it->first < iv.end; ++it) {
      if (it->second <= cursor) continue;
      if (it->first > cursor) fresh.push_back({cursor, it->first});
      cursor = std::max(cursor, it->second);
      if (cursor >= iv.end) break;
    }
    if (cursor < iv.end) fresh.push_back({cursor, iv.end});
    for (const auto& f : fresh) ranges_.emplace(f.start, f.end);
    return fresh;
  }

  bool overlaps(ByteInterval iv) const {
    if (iv.empty()) return false;
    auto it = ranges_.upper_bound(iv.start);
    if (it != ranges_.begin()) {
      auto prev = std::prev(it);
      if (prev->second > iv.start) return true;
    }
    return it != ranges_.end() && it->first < iv.end;
  }

 private:
  std::map<std::uint64_t, std::uint64_t> ranges_;
};

}  // namespace

std::string_view to_string(RegionKind kind) noexcept {
  switch (kind) {
    case RegionKind::Dos: return "dos";
    case RegionKind::PeHeaders: return "pe_headers";
    case RegionKind::Content: return "content";
    case RegionKind::Slack: return "slack";
    case RegionKind::Overlay: return "overlay";
    case RegionKind::Code: return "code";
  }
  return "unknown";
}

std::optional<RegionKind> region_kind_from_string(std::string_view name) noexcept {
  for (auto k : {RegionKind::Dos, RegionKind::PeHeaders, RegionKind::Content, RegionKind::Slack,
                 RegionKind::Overlay, RegionKind::Code}) {
    if (to_string(k) == name) return k;
  }
  if (name == "text") return RegionKind::Code;
  return std::nullopt;
}

PeLayout parse_pe(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && (bytes[0] != 'M' || bytes[1] != 'Z')) {
    throw Error(ErrorCode::NotPe, "missing MZ signature");
  }
  need(bytes, kDosHeaderSize, "DOS header");

  PeLayout layout;
  layout.file_len = bytes.size();
  layout.e_lfanew = read_u32(bytes, kLfanewOffset);
  if (layout.e_lfanew < kDosHeaderSize) {
    throw Error(ErrorCode::NotPe, "e_lfanew " + std::to_string(layout.e_lfanew) +
                                      " points inside the DOS header");
  }
  need(bytes, layout.e_lfanew + 4, "PE signature");
  if (read_u32(bytes, layout.e_lfanew) != 0x00004550u) {
    throw Error(ErrorCode::NotPe, "missing PE\\0\\0 signature at e_lfanew");
  }

  const std::uint64_t coff = layout.e_lfanew + 4;
  need(bytes, coff + kCoffHeaderSize, "COFF header");
  const std::uint16_t n_sections = read_u16(bytes, coff + 2);
  const std::uint16_t opt_size = read_u16(bytes, coff + 16);

  const std::uint64_t opt = coff + kCoffHeaderSize;
  need(bytes, opt + kMinOptionalHeader, "optional header");
  const std::uint16_t magic = read_u16(bytes, opt);
  if ((magic != 0x10b && magic != 0x20b) || opt_size < kMinOptionalHeader) {
    layout.malformed = true;
  }
  layout.size_of_headers = read_u32(bytes, opt + kSizeOfHeadersOffset);

  const std::uint64_t table = opt + opt_size;
  const std::uint64_t table_end = table + kSectionHeaderSize * n_sections;
  need(bytes, table_end, "section table");
  if (layout.size_of_headers < table_end || layout.size_of_headers > layout.file_len) {
    layout.malformed = true;
  }

  layout.sections.reserve(n_sections);
  for (std::uint16_t i = 0; i < n_sections; ++i) {
    const std::uint64_t h = table + kSectionHeaderSize * i;
    SectionEntry s;
    const auto* name = reinterpret_cast<const char*>(bytes.data() + h);
    s.name.assign(name, std::find(name, name + 8, '\0'));
    s.virtual_size = read_u32(bytes, h + 8);
    s.size_raw = read_u32(bytes, h + 16);
    s.ptr_raw = read_u32(bytes, h + 20);
    s.characteristics = read_u32(bytes, h + 36);
    if (s.ptr_raw > layout.file_len) {
      layout.malformed = true;
      s.ptr_raw = layout.file_len;
    }
    if (s.size_raw > layout.file_len - s.ptr_raw) {
      layout.malformed = true;
      s.size_raw = layout.file_len - s.ptr_raw;
    }
    layout.sections.push_back(std::move(s));
  }
  return layout;
}

std::optional<std::size_t> code_section(const PeLayout& layout) noexcept {
  for (std::size_t i = 0; i < layout.sections.size(); ++i) {
    if (layout.sections[i].is_executable()) return i;
  }
  return std::nullopt;
}

std::vector<ByteInterval> normalize(std::vector<ByteInterval> intervals) {
  std::erase_if(intervals, [](const ByteInterval& iv) { return iv.empty(); });
  std::sort(intervals.begin(), intervals.end(),
            [](const ByteInterval& a, const ByteInterval& b) {
              return a.start < b.start || (a.start == b.start && a.end < b.end);
            });
  std::vector<ByteInterval> out;
  for (const auto& iv : intervals) {
    if (!out.empty() && iv.start <= out.back().end) {
      out.back().end = std::max(out.back().end, iv.end);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

RegionMap region_map(const PeLayout& layout) {
  RegionMap map;
  map.file_len = layout.file_len;
  map.malformed = layout.malformed;
  map.code_section_index = code_section(layout);

  const std::uint64_t len = layout.file_len;
  const std::uint64_t dos_end = std::min(layout.e_lfanew, len);
  const std::uint64_t headers_end = std::min(std::max(layout.size_of_headers, dos_end), len);

  ClaimedSet claimed;
  if (dos_end > 0) {
    map.dos.push_back({0, dos_end});
    claimed.claim({0, dos_end});
  }
  if (headers_end > dos_end) {
    map.pe_headers.push_back({dos_end, headers_end});
    claimed.claim({dos_end, headers_end});
  }

  std::uint64_t overlay_start = headers_end;
  map.content.reserve(layout.sections.size());
  for (const auto& s : layout.sections) {
    const std::uint64_t ptr = std::min(s.ptr_raw, len);
    const std::uint64_t raw = std::min(s.size_raw, len - ptr);
    const std::uint64_t used = s.virtual_size == 0 ? raw : std::min(s.virtual_size, raw);
    if (raw > 0) overlay_start = std::max(overlay_start, ptr + raw);

    const ByteInterval want{ptr, ptr + used};
    if (claimed.overlaps(want)) map.malformed = true;
    map.content.push_back(claimed.claim(want));
  }
  overlay_start = std::min(overlay_start, len);

  if (overlay_start < len) map.overlay.push_back({overlay_start, len});
  // Whatever is left below the overlay is slack.
  map.slack = claimed.claim({0, overlay_start});
  return map;
}

std::vector<ByteInterval> RegionMap::intervals(RegionKind kind) const {
  switch (kind) {
    case RegionKind::Dos: return normalize(dos);
    case RegionKind::PeHeaders: return normalize(pe_headers);
    case RegionKind::Slack: return normalize(slack);
    case RegionKind::Overlay: return normalize(overlay);
    case RegionKind::Content: {
      std::vector<ByteInterval> all;
      for (const auto& sec : content) all.insert(all.end(), sec.begin(), sec.end());
      return normalize(std::move(all));
    }
    case RegionKind::Code:
      if (!code_section_index || *code_section_index >= content.size()) return {};
      return normalize(content[*code_section_index]);
  }
  return {};
}

std::vector<RegionMap::Labeled> RegionMap::labeled() const {
  std::vector<Labeled> out;
  for (auto kind : kPartitionKinds) {
    for (const auto& iv : intervals(kind)) out.push_back({kind, iv});
  }
  std::sort(out.begin(), out.end(),
            [](const Labeled& a, const Labeled& b) { return a.interval.start < b.interval.start; });
  return out;
}

std::vector<double> select(std::span<const double> attr, const RegionMap& map, RegionKind kind,
                           std::uint64_t window) {
  const std::uint64_t limit = std::min<std::uint64_t>(window, attr.size());
  std::vector<double> out;
  for (const auto& iv : map.intervals(kind)) {
    if (iv.start >= limit) break;
    const std::uint64_t end = std::min(iv.end, limit);
    out.insert(out.end(), attr.begin() + static_cast<std::ptrdiff_t>(iv.start),
               attr.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

double selected_squared_norm(std::span<const double> attr, const RegionMap& map, RegionKind kind,
                             std::uint64_t window) {
  const std::uint64_t limit = std::min<std::uint64_t>(window, attr.size());
  double sum = 0.0;
  for (const auto& iv : map.intervals(kind)) {
    if (iv.start >= limit) break;
    const std::uint64_t end = std::min(iv.end, limit);
    for (std::uint64_t i = iv.start; i < end; ++i) sum += attr[i] * attr[i];
  }
  return sum;
}

double squared_norm(std::span<const double> values) noexcept {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return sum;
}

}  // namespace spurscan
