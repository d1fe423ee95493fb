#include <doctest.h>
#include <json.hpp>

#include <cstring>

#include "spurscan/error.hpp"
#include "spurscan/weights_io.hpp"

using namespace spurscan;

namespace {

ErrorCode code_of(std::span<const std::uint8_t> bytes) {
  try {
    load_weights(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("load_weights accepted corrupt input");
  return ErrorCode::BadReport;
}

std::uint32_t manifest_len(const std::vector<std::uint8_t>& b) {
  return std::uint32_t(b[8]) | std::uint32_t(b[9]) << 8 | std::uint32_t(b[10]) << 16 |
         std::uint32_t(b[11]) << 24;
}

// Replaces the JSON manifest while keeping the payload.
std::vector<std::uint8_t> with_manifest(const std::vector<std::uint8_t>& file, const nlohmann::json& m) {
  const auto len = manifest_len(file);
  const std::string text = m.dump();
  std::vector<std::uint8_t> out(file.begin(), file.begin() + 8);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), file.begin() + 12 + len, file.end());
  return out;
}

nlohmann::json manifest_of(const std::vector<std::uint8_t>& file) {
  const auto len = manifest_len(file);
  return nlohmann::json::parse(file.begin() + 12, file.begin() + 12 + len);
}

}  // namespace

TEST_CASE("round trip is byte identical") {
  for (const auto& cfg : {ModelConfig::malconv_small(), ModelConfig::bbdnn_small(128)}) {
    auto w = init_weights(cfg, 5);
    auto bytes = save_weights(cfg, w);
    CHECK(std::memcmp(bytes.data(), kWeightMagic, 8) == 0);
    auto loaded = load_weights(bytes);
    CHECK(loaded.config == cfg);
    CHECK(loaded.weights == w);
    CHECK(save_weights(loaded.config, loaded.weights) == bytes);
  }
}

TEST_CASE("payload is little-endian float32 at the manifest offsets") {
  auto cfg = ModelConfig::malconv_small(64);
  auto w = init_weights(cfg, 9);
  auto bytes = save_weights(cfg, w);
  auto m = manifest_of(bytes);
  const std::size_t payload = 12 + manifest_len(bytes);
  std::size_t total = 0;
  for (const auto& t : m["tensors"]) {
    const auto& tensor = w.at(t["name"].get<std::string>());
    const std::size_t off = t["offset"].get<std::size_t>();
    float first;
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= std::uint32_t(bytes[payload + off + i]) << (8 * i);
    std::memcpy(&first, &u, 4);
    CHECK(first == tensor.data[0]);
    total += tensor.data.size() * 4;
  }
  CHECK(bytes.size() == payload + total);
}

TEST_CASE("corrupt files") {
  auto cfg = ModelConfig::malconv_small();
  auto bytes = save_weights(cfg, init_weights(cfg, 1));

  SUBCASE("bad magic") {
    auto b = bytes;
    b[7] = '2';
    CHECK(code_of(b) == ErrorCode::BadMagic);
    CHECK(code_of(std::span(bytes).first(4)) == ErrorCode::BadMagic);
  }
  SUBCASE("manifest disagrees with the layer plan") {
    auto m = manifest_of(bytes);
    m["config"]["embed_dim"] = 9;
    CHECK(code_of(with_manifest(bytes, m)) == ErrorCode::ManifestMismatch);

    auto renamed = manifest_of(bytes);
    renamed["tensors"][0]["name"] = "embed.weight_x";
    CHECK(code_of(with_manifest(bytes, renamed)) == ErrorCode::ManifestMismatch);
  }
  SUBCASE("truncated payload") {
    auto b = bytes;
    b.pop_back();
    CHECK(code_of(b) == ErrorCode::TruncatedPayload);
    b.resize(12 + manifest_len(bytes) + 3);
    CHECK(code_of(b) == ErrorCode::TruncatedPayload);
  }
}
