#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "opushield/model.hpp"

namespace opushield {

/// Binary model container, version 1:
///
///   bytes 0..7    magic "OPSHCKPT"
///   bytes 8..11   format version, u32 little-endian
///   bytes 12..19  header length H, u64 little-endian
///   next H bytes  JSON header: input shape, classes, layer descriptors,
///                 optical config (seed, dims, scale, stages), feedback
///                 matrix (seed, scale, shape), training method, metadata
///   remainder     parameter payload, float64 little-endian, in the order the
///                 header lists them
///
/// The optical matrix is never written; it is regenerated from its config.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta = {});
/// Throws ParseError (with byte offset) on malformed input.
Model decode_checkpoint(const std::string& bytes, CheckpointMeta* meta = nullptr);

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});
Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace opushield
