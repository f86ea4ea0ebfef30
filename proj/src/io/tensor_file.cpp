#include <bit>
#include <fstream>
#include <zlib.h>

#include "atnbreak/io.hpp"
#include "byte_io.hpp"

namespace atnbreak {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatErrorKind::io, "cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError(FormatErrorKind::io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw FormatError(FormatErrorKind::io, "cannot rename " + tmp.string() + " to " +
                                               path.string() + ": " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return out;
}

std::vector<std::uint8_t> encode_tensor(const DiffArray& array) {
  ByteWriter w;
  w.raw("ATNT");
  w.u16(kTensorFileVersion);
  w.u16(kDtypeF64);
  w.u16(static_cast<std::uint16_t>(array.rank()));
  for (std::size_t e : array.shape()) w.u64(e);
  const std::size_t payload_start = w.size();
  for (double v : array.values()) w.u64(std::bit_cast<std::uint64_t>(v));
  const auto crc = crc32(std::span(w.bytes()).subspan(payload_start));
  w.u32(crc);
  return w.take();
}

DiffArray decode_tensor(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  ByteReader r(bytes, "tensor file");
  if (r.remaining() < 4) throw FormatError(FormatErrorKind::truncated, "tensor file: truncated header");
  if (!r.expect_magic("ATNT")) throw FormatError(FormatErrorKind::bad_magic, "tensor file: bad magic");
  const auto version = r.u16();
  if (version != kTensorFileVersion) {
    throw FormatError(FormatErrorKind::bad_version,
                      "tensor file: unsupported version " + std::to_string(version));
  }
  const auto dtype = r.u16();
  if (dtype != kDtypeF64) {
    throw FormatError(FormatErrorKind::bad_dtype, "tensor file: unsupported dtype " + std::to_string(dtype));
  }
  const auto rank = r.u16();
  Shape shape(rank);
  for (auto& e : shape) e = r.u64();
  std::size_t count = 1;
  for (std::size_t e : shape) {
    if (e != 0 && count > r.remaining() / e) {
      throw FormatError(FormatErrorKind::truncated, "tensor file: payload shorter than extents " +
                                                        shape_string(shape));
    }
    count *= e;
  }
  if (r.remaining() < count * 8 + 4) {
    throw FormatError(FormatErrorKind::truncated,
                      "tensor file: payload shorter than extents " + shape_string(shape));
  }
  const auto payload = bytes.subspan(r.position(), count * 8);
  std::vector<double> values(count);
  for (double& v : values) v = std::bit_cast<double>(r.u64());
  const auto stored = r.u32();
  if (stored != crc32(payload)) {
    throw FormatError(FormatErrorKind::crc_mismatch, "tensor file: payload CRC mismatch");
  }
  if (consumed) *consumed = r.position();
  return DiffArray(std::move(shape), std::move(values));
}

void write_tensor(const std::filesystem::path& path, const DiffArray& array) {
  write_file_atomic(path, encode_tensor(array));
}

DiffArray read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t used = 0;
  DiffArray out = decode_tensor(bytes, &used);
  if (used != bytes.size()) {
    throw FormatError(FormatErrorKind::malformed, "tensor file: trailing bytes in " + path.string());
  }
  return out;
}

}  // namespace atnbreak
