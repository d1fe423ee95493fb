#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "spurscan/pe.hpp"
#include "spurscan/synth.hpp"

namespace spurscan::testing {

inline std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
  return lo + rng() % (hi - lo + 1);
}

// Valid fixture layout: 0..4 sections laid out in order with random gaps,
// random virtual sizes (sometimes 0), random overlay.
inline FixtureSpec random_fixture_spec(std::mt19937_64& rng) {
  FixtureSpec spec;
  spec.e_lfanew = static_cast<std::uint32_t>(uniform(rng, 0x40, 0xC0) & ~7u);
  const std::uint32_t n = static_cast<std::uint32_t>(uniform(rng, 0, 4));
  const std::uint32_t table_end = spec.e_lfanew + 4 + 20 + 0xE0 + 40 * n;
  spec.size_of_headers = table_end + static_cast<std::uint32_t>(uniform(rng, 0, 0x100));
  std::uint32_t cursor = spec.size_of_headers + static_cast<std::uint32_t>(uniform(rng, 0, 0x40));
  const std::uint32_t exec_idx = static_cast<std::uint32_t>(uniform(rng, 0, n));  // n => none
  for (std::uint32_t i = 0; i < n; ++i) {
    SectionSpec s;
    s.name = "s" + std::to_string(i);
    s.ptr_raw = cursor;
    s.size_raw = static_cast<std::uint32_t>(uniform(rng, 0, 0x400));
    switch (rng() % 4) {
      case 0: s.virtual_size = 0; break;
      case 1: s.virtual_size = s.size_raw + static_cast<std::uint32_t>(uniform(rng, 0, 0x100)); break;
      default: s.virtual_size = static_cast<std::uint32_t>(uniform(rng, 1, s.size_raw + 1)); break;
    }
    s.executable = i == exec_idx;
    spec.sections.push_back(s);
    cursor += s.size_raw + static_cast<std::uint32_t>(uniform(rng, 0, 0x80));
  }
  spec.overlay_len = uniform(rng, 0, 0x300);
  return spec;
}

// Arbitrary (possibly overlapping, out-of-order, truncated) section table,
// fed straight to region_map without going through bytes.
inline PeLayout random_layout(std::mt19937_64& rng) {
  PeLayout layout;
  layout.file_len = uniform(rng, 0x40, 0x2000);
  layout.e_lfanew = uniform(rng, 0x40, std::min<std::uint64_t>(0x200, layout.file_len));
  layout.size_of_headers = uniform(rng, 0, 0x800);
  const std::size_t n = uniform(rng, 0, 6);
  for (std::size_t i = 0; i < n; ++i) {
    SectionEntry s;
    s.name = "r" + std::to_string(i);
    s.ptr_raw = uniform(rng, 0, layout.file_len);
    s.size_raw = uniform(rng, 0, layout.file_len - s.ptr_raw);
    s.virtual_size = rng() % 3 == 0 ? 0 : uniform(rng, 0, 0x800);
    s.characteristics = rng() % 3 == 0 ? kSectionExecutable : 0;
    layout.sections.push_back(s);
  }
  return layout;
}

inline std::vector<double> random_attr(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Per-byte tag: which partition kind owns offset i (brute force, no intervals).
inline std::vector<RegionKind> tag_bytes(const PeLayout& layout) {
  const std::uint64_t n = layout.file_len;
  std::vector<int> owner(n, -1);
  const std::uint64_t dos_end = std::min(layout.e_lfanew, n);
  const std::uint64_t hdr_end = std::min(std::max(layout.size_of_headers, dos_end), n);
  for (std::uint64_t i = 0; i < dos_end; ++i) owner[i] = static_cast<int>(RegionKind::Dos);
  for (std::uint64_t i = dos_end; i < hdr_end; ++i) owner[i] = static_cast<int>(RegionKind::PeHeaders);
  std::uint64_t overlay = hdr_end;
  for (const auto& s : layout.sections) {
    const std::uint64_t ptr = std::min(s.ptr_raw, n);
    const std::uint64_t raw = std::min(s.size_raw, n - ptr);
    if (raw > 0) overlay = std::max(overlay, ptr + raw);
    const std::uint64_t used = s.virtual_size == 0 ? raw : std::min(s.virtual_size, raw);
    for (std::uint64_t i = ptr; i < ptr + used; ++i) {
      if (owner[i] < 0) owner[i] = static_cast<int>(RegionKind::Content);
    }
  }
  std::vector<RegionKind> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (owner[i] >= 0) out[i] = static_cast<RegionKind>(owner[i]);
    else out[i] = i < overlay ? RegionKind::Slack : RegionKind::Overlay;
  }
  return out;
}

inline std::vector<bool> code_bytes(const PeLayout& layout) {
  std::vector<bool> out(layout.file_len, false);
  auto idx = code_section(layout);
  if (!idx) return out;
  // Bytes the code section owns: its content minus anything claimed earlier.
  PeLayout prefix = layout;
  prefix.sections.resize(*idx);
  auto before = tag_bytes(prefix);
  const auto& s = layout.sections[*idx];
  const std::uint64_t ptr = std::min(s.ptr_raw, layout.file_len);
  const std::uint64_t raw = std::min(s.size_raw, layout.file_len - ptr);
  const std::uint64_t used = s.virtual_size == 0 ? raw : std::min(s.virtual_size, raw);
  for (std::uint64_t i = ptr; i < ptr + used; ++i) {
    if (before[i] != RegionKind::Dos && before[i] != RegionKind::PeHeaders &&
        before[i] != RegionKind::Content) {
      out[i] = true;
    }
  }
  return out;
}

}  // namespace spurscan::testing
