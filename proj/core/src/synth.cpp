#include "spurscan/synth.hpp"

#include <algorithm>
#include <random>

#include "spurscan/error.hpp"

namespace spurscan {

namespace {

constexpr std::uint32_t kOptionalHeaderSize = 0xE0;  // PE32 with 16 data directories
constexpr std::uint32_t kSectionAlign = 0x1000;
constexpr std::uint32_t kFileAlign = 0x200;

std::uint32_t align_up(std::uint64_t v, std::uint32_t a) {
  return static_cast<std::uint32_t>((v + a - 1) / a * a);
}

void put16(std::vector<std::uint8_t>& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

constexpr std::uint8_t kOpcodeAlphabet[8] = {0x00, 0x8B, 0x89, 0xE8, 0xC3, 0x90, 0xFF, 0x48};

void fill(std::vector<std::uint8_t>& b, const std::vector<ByteInterval>& ivs, Fill policy, std::mt19937_64& rng) {
  for (const auto& iv : ivs) {
    for (std::uint64_t i = iv.start; i < iv.end; ++i) {
      switch (policy) {
        case Fill::Zero: b[i] = 0; break;
        case Fill::Random: b[i] = static_cast<std::uint8_t>(rng() >> 56); break;
        case Fill::LowEntropy: b[i] = kOpcodeAlphabet[rng() >> 61]; break;
      }
    }
  }
}

void check_spec(const FixtureSpec& spec) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InconsistentSpec, msg); };
  if (spec.e_lfanew < 0x40) fail("e_lfanew must be >= 0x40");
  const std::uint64_t table_end =
      std::uint64_t{spec.e_lfanew} + 4 + 20 + kOptionalHeaderSize + 40ull * spec.sections.size();
  if (table_end > spec.size_of_headers) fail("headers do not fit below size_of_headers");
  if (spec.sections.size() > 0xFFFF) fail("too many sections");
  std::vector<ByteInterval> spans;
  for (const auto& s : spec.sections) {
    if (s.name.size() > 8) fail("section name longer than 8 bytes: " + s.name);
    if (s.ptr_raw < spec.size_of_headers && s.size_raw > 0) fail("section " + s.name + " overlaps the headers");
    spans.push_back({s.ptr_raw, std::uint64_t{s.ptr_raw} + s.size_raw});
  }
  std::sort(spans.begin(), spans.end(), [](auto& a, auto& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (!spans[i].empty() && spans[i].start < spans[i - 1].end) fail("section raw spans overlap");
  }
}

}  // namespace

FixtureSpec FixtureSpec::example() {
  FixtureSpec spec;
  spec.sections.push_back({".text", 0x200, 0x200, 0x180, true});
  spec.overlay_len = 0x100;
  return spec;
}

FixtureSpec FixtureSpec::toy_template() {
  FixtureSpec spec;
  spec.sections.push_back({".text", 0x200, 0x600, 0x500, true});
  spec.sections.push_back({".data", 0x880, 0x380, 0x300, false});
  spec.overlay_len = 0x200;
  spec.fill = {Fill::LowEntropy, Fill::LowEntropy, Fill::Zero, Fill::LowEntropy};
  return spec;
}

std::uint64_t FixtureSpec::file_len() const noexcept {
  std::uint64_t end = size_of_headers;
  for (const auto& s : sections) {
    if (s.size_raw > 0) end = std::max(end, std::uint64_t{s.ptr_raw} + s.size_raw);
  }
  return end + overlay_len;
}

PeLayout layout_of(const FixtureSpec& spec) {
  PeLayout layout;
  layout.e_lfanew = spec.e_lfanew;
  layout.size_of_headers = spec.size_of_headers;
  layout.file_len = spec.file_len();
  for (const auto& s : spec.sections) {
    SectionEntry e;
    e.name = s.name;
    e.ptr_raw = s.ptr_raw;
    e.size_raw = s.size_raw;
    e.virtual_size = s.virtual_size;
    e.characteristics = s.executable ? 0x60000020u : 0xC0000040u;
    layout.sections.push_back(e);
  }
  return layout;
}

std::vector<std::uint8_t> make_fixture(const FixtureSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  std::mt19937_64 rng(seed);
  const PeLayout layout = layout_of(spec);
  const RegionMap map = region_map(layout);
  std::vector<std::uint8_t> b(layout.file_len, 0);

  fill(b, map.intervals(RegionKind::Dos), spec.fill.dos_stub, rng);
  fill(b, map.intervals(RegionKind::Content), spec.fill.content, rng);
  fill(b, map.intervals(RegionKind::Slack), spec.fill.slack, rng);
  fill(b, map.intervals(RegionKind::Overlay), spec.fill.overlay, rng);
  // The DOS header proper is structural; only the stub keeps its fill.
  std::fill(b.begin(), b.begin() + 0x40, 0);

  b[0] = 'M';
  b[1] = 'Z';
  put32(b, 0x3C, spec.e_lfanew);

  const std::size_t pe = spec.e_lfanew;
  b[pe] = 'P';
  b[pe + 1] = 'E';
  b[pe + 2] = 0;
  b[pe + 3] = 0;

  const std::size_t coff = pe + 4;
  put16(b, coff, 0x014C);  // i386
  put16(b, coff + 2, static_cast<std::uint16_t>(spec.sections.size()));
  put16(b, coff + 16, kOptionalHeaderSize);
  put16(b, coff + 18, 0x0102);  // executable image, 32-bit machine

  std::uint32_t va = kSectionAlign;
  std::vector<std::uint32_t> vas;
  std::uint32_t size_of_code = 0, entry = 0, base_of_data = 0;
  for (const auto& s : spec.sections) {
    vas.push_back(va);
    if (s.executable) {
      size_of_code += align_up(s.size_raw, kFileAlign);
      if (entry == 0) entry = va;
    } else if (base_of_data == 0) {
      base_of_data = va;
    }
    va += align_up(std::max<std::uint64_t>({s.virtual_size, s.size_raw, 1}), kSectionAlign);
  }

  const std::size_t opt = coff + 20;
  put16(b, opt, 0x010B);  // PE32
  put32(b, opt + 4, size_of_code);
  put32(b, opt + 16, entry);
  put32(b, opt + 20, entry);  // BaseOfCode
  put32(b, opt + 24, base_of_data);
  put32(b, opt + 28, 0x00400000);  // ImageBase
  put32(b, opt + 32, kSectionAlign);
  put32(b, opt + 36, kFileAlign);
  put16(b, opt + 40, 6);  // MajorOperatingSystemVersion
  put16(b, opt + 48, 6);  // MajorSubsystemVersion
  put32(b, opt + 56, va);  // SizeOfImage
  put32(b, opt + 60, spec.size_of_headers);
  put16(b, opt + 68, 2);  // Subsystem: Windows GUI
  put32(b, opt + 72, 0x00100000);  // SizeOfStackReserve
  put32(b, opt + 76, 0x1000);
  put32(b, opt + 80, 0x00100000);  // SizeOfHeapReserve
  put32(b, opt + 84, 0x1000);
  put32(b, opt + 92, 16);  // NumberOfRvaAndSizes

  std::size_t sh = opt + kOptionalHeaderSize;
  for (std::size_t i = 0; i < spec.sections.size(); ++i, sh += 40) {
    const auto& s = spec.sections[i];
    std::copy(s.name.begin(), s.name.end(), b.begin() + static_cast<std::ptrdiff_t>(sh));
    put32(b, sh + 8, s.virtual_size);
    put32(b, sh + 12, vas[i]);
    put32(b, sh + 16, s.size_raw);
    put32(b, sh + 20, s.ptr_raw);
    put32(b, sh + 36, layout.sections[i].characteristics);
  }
  return b;
}

std::vector<SyntheticSample> gen_dataset(std::size_t n_per_class, const FixtureSpec& tmpl,
                                         const PlantSpec& plant, std::uint64_t seed) {
  if (n_per_class == 0) throw Error(ErrorCode::InconsistentSpec, "need at least one file per class");
  if (!(plant.p >= 0.5 && plant.p <= 1.0)) throw Error(ErrorCode::InconsistentSpec, "plant p must lie in [0.5, 1]");
  check_spec(tmpl);

  const RegionMap map = region_map(layout_of(tmpl));
  // Candidate start offsets where the whole marker fits in one interval.
  std::vector<ByteInterval> slots;
  const std::uint64_t m = plant.marker.size();
  for (const auto& iv : map.intervals(plant.region)) {
    // Keep the MZ signature and e_lfanew intact.
    const std::uint64_t start = plant.region == RegionKind::Dos ? std::max<std::uint64_t>(iv.start, 0x40) : iv.start;
    if (iv.end >= start + m) slots.push_back({start, iv.end - m + 1});
  }
  if (slots.empty()) {
    throw Error(ErrorCode::InconsistentSpec,
                "marker does not fit in any " + std::string(to_string(plant.region)) + " interval of the template");
  }
  std::uint64_t n_slots = 0;
  for (const auto& s : slots) n_slots += s.size();

  std::mt19937_64 rng(seed);
  std::vector<SyntheticSample> out;
  out.reserve(2 * n_per_class);
  for (Label label : {Label::Goodware, Label::Malware}) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      SyntheticSample s;
      s.label = label;
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.exe", std::string(to_string(label)).c_str(), i);
      s.name = name;
      const std::uint64_t file_seed = rng();
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      std::uint64_t pick = rng() % n_slots;
      s.bytes = make_fixture(tmpl, file_seed);
      const double prob = label == plant.correlated ? plant.p : 1.0 - plant.p;
      if (u < prob) {
        for (const auto& slot : slots) {
          if (pick < slot.size()) {
            s.marker_offset = slot.start + pick;
            break;
          }
          pick -= slot.size();
        }
        std::copy(plant.marker.begin(), plant.marker.end(),
                  s.bytes.begin() + static_cast<std::ptrdiff_t>(s.marker_offset));
        s.has_marker = true;
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace spurscan
