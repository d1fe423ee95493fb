#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "spurscan/model.hpp"

namespace spurscan {

/// Portable weight file:
///
///   bytes 0..7    magic "SPURW001"
///   bytes 8..11   u32 LE manifest length L
///   bytes 12..12+L  UTF-8 JSON {"arch","config","tensors":[{"name","shape","offset"}]}
///   then          payload of little-endian float32 values; each tensor's
///                 `offset` is in bytes from the payload start.
inline constexpr char kWeightMagic[8] = {'S', 'P', 'U', 'R', 'W', '0', '0', '1'};

struct ModelFile {
  ModelConfig config;
  WeightStore weights;
};

std::vector<std::uint8_t> save_weights(const ModelConfig& cfg, const WeightStore& weights);

/// Throws Error{BadMagic}, Error{ManifestMismatch} (tensor names/shapes
/// disagree with the layer plan of the manifest's own config) or
/// Error{TruncatedPayload}.
ModelFile load_weights(std::span<const std::uint8_t> bytes);

ModelFile read_model_file(const std::filesystem::path& path);
void write_model_file(const std::filesystem::path& path, const ModelConfig& cfg,
                      const WeightStore& weights);

}  // namespace spurscan
