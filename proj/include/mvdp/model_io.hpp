#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace mvdp {

// Model container "MVDM" v1, little-endian:
//   magic "MVDM", u32 version, u32 chunk_count,
//   then per chunk: 4-byte type tag, u64 payload size, payload.
// Classifier weights live in an "FCNT" chunk, regressor weights in "RIDG".
struct ModelChunk {
  std::array<char, 4> type{};
  std::vector<std::uint8_t> payload;

  bool is(std::string_view tag) const;
};

/// Writes atomically (temporary file + rename). Throws IoFailure.
void write_model_file(const std::filesystem::path& path, std::span<const ModelChunk> chunks);
/// Throws IoFailure or FormatError.
std::vector<ModelChunk> read_model_file(const std::filesystem::path& path);
/// First chunk with the tag. Throws FormatError when absent.
const ModelChunk& find_chunk(std::span<const ModelChunk> chunks, std::string_view tag);

}  // namespace mvdp
