#include "mvdp/model_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "mvdp/bytes.hpp"
#include "mvdp/error.hpp"

namespace mvdp {

namespace {
constexpr std::array<char, 4> kMagic = {'M', 'V', 'D', 'M'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

bool ModelChunk::is(std::string_view tag) const {
  return tag.size() == 4 && std::equal(type.begin(), type.end(), tag.begin());
}

void write_model_file(const std::filesystem::path& path, std::span<const ModelChunk> chunks) {
  detail::ByteSink s;
  for (char c : kMagic) s.u8(static_cast<std::uint8_t>(c));
  s.u32(kVersion);
  s.u32(static_cast<std::uint32_t>(chunks.size()));
  for (const auto& c : chunks) {
    for (char t : c.type) s.u8(static_cast<std::uint8_t>(t));
    s.u64(c.payload.size());
    s.raw(c.payload.data(), c.payload.size());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(s.bytes().data()), static_cast<std::streamsize>(s.bytes().size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot move model into place: " + ec.message());
}

std::vector<ModelChunk> read_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteSource src(bytes);
  for (char c : kMagic) {
    if (src.u8() != static_cast<std::uint8_t>(c)) throw Error(ErrorCode::FormatError, path.string() + " is not an MVDM file");
  }
  const auto version = src.u32();
  if (version != kVersion) throw Error(ErrorCode::FormatError, "unsupported MVDM version " + std::to_string(version));
  const auto count = src.u32();
  std::vector<ModelChunk> chunks(count);
  for (auto& c : chunks) {
    for (auto& t : c.type) t = static_cast<char>(src.u8());
    const auto size = src.u64();
    if (size > bytes.size()) throw Error(ErrorCode::FormatError, "chunk size exceeds file size");
    c.payload.resize(size);
    src.raw(c.payload.data(), size);
  }
  if (!src.done()) throw Error(ErrorCode::FormatError, "trailing bytes after last chunk");
  return chunks;
}

const ModelChunk& find_chunk(std::span<const ModelChunk> chunks, std::string_view tag) {
  for (const auto& c : chunks) {
    if (c.is(tag)) return c;
  }
  throw Error(ErrorCode::FormatError, "model file has no " + std::string(tag) + " chunk");
}

}  // namespace mvdp
