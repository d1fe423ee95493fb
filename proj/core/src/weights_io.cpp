#include "spurscan/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "json.hpp"
#include "spurscan/corpus.hpp"
#include "spurscan/error.hpp"

namespace spurscan {

namespace {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "weight payload I/O assumes a little-endian host");

}  // namespace

std::vector<std::uint8_t> save_weights(const ModelConfig& cfg, const WeightStore& weights) {
  check_weights(cfg, weights);
  json manifest;
  manifest["arch"] = to_string(cfg.arch);
  manifest["config"] = json::parse(config_to_json(cfg));
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : weights.entries()) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["offset"] = offset;
    manifest["tensors"].push_back(std::move(entry));
    offset += t.size() * sizeof(float);
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(12 + text.size() + offset);
  std::memcpy(out.data(), kWeightMagic, sizeof kWeightMagic);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out[8 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  std::memcpy(out.data() + 12, text.data(), text.size());
  std::size_t at = 12 + text.size();
  for (const auto& nt : weights.entries()) {
    const std::size_t n = nt.tensor.size() * sizeof(float);
    if (n > 0) std::memcpy(out.data() + at, nt.tensor.data.data(), n);
    at += n;
  }
  return out;
}

ModelFile load_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kWeightMagic), std::end(kWeightMagic), bytes.begin(),
                                      [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw Error(ErrorCode::BadMagic, "not a SPURW001 weight file");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::TruncatedPayload, "missing manifest length");
  const std::uint32_t len = static_cast<std::uint32_t>(bytes[8]) | (static_cast<std::uint32_t>(bytes[9]) << 8) |
                            (static_cast<std::uint32_t>(bytes[10]) << 16) |
                            (static_cast<std::uint32_t>(bytes[11]) << 24);
  if (bytes.size() < 12ull + len) throw Error(ErrorCode::TruncatedPayload, "manifest extends past end of file");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, std::string("manifest is not valid JSON: ") + e.what());
  }

  ModelFile file;
  try {
    if (!manifest.contains("config") || !manifest.contains("tensors") || !manifest.contains("arch")) {
      throw Error(ErrorCode::ManifestMismatch, "manifest needs arch, config and tensors");
    }
    try {
      file.config = config_from_json(manifest["config"].dump());
    } catch (const Error& e) {
      throw Error(ErrorCode::ManifestMismatch, e.what());
    }
    if (manifest["arch"].get<std::string>() != to_string(file.config.arch)) {
      throw Error(ErrorCode::ManifestMismatch, "manifest arch disagrees with its config");
    }

    const auto payload = bytes.subspan(12 + len);
    const auto plan = layer_plan(file.config);
    const auto& tensors = manifest["tensors"];
    if (!tensors.is_array() || tensors.size() != plan.size()) {
      throw Error(ErrorCode::ManifestMismatch, "manifest lists " + std::to_string(tensors.size()) +
                                                   " tensors, layer plan needs " + std::to_string(plan.size()));
    }
    std::vector<NamedTensor> entries;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto& t = tensors[i];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      if (name != plan[i].name || shape != plan[i].shape) {
        throw Error(ErrorCode::ManifestMismatch, "tensor " + name + shape_to_string(shape) + " does not match " +
                                                     plan[i].name + shape_to_string(plan[i].shape));
      }
      const std::uint64_t nbytes = element_count(shape) * sizeof(float);
      if (offset > payload.size() || nbytes > payload.size() - offset) {
        throw Error(ErrorCode::TruncatedPayload, "tensor " + name + " extends past end of payload");
      }
      Tensor tensor(shape);
      std::memcpy(tensor.data.data(), payload.data() + offset, nbytes);
      entries.push_back({name, std::move(tensor)});
    }
    file.weights = WeightStore(std::move(entries));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, std::string("malformed manifest: ") + e.what());
  }
  return file;
}

ModelFile read_model_file(const std::filesystem::path& path) { return load_weights(read_file(path)); }

void write_model_file(const std::filesystem::path& path, const ModelConfig& cfg, const WeightStore& weights) {
  write_file(path, save_weights(cfg, weights));
}

}  // namespace spurscan
