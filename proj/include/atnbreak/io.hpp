#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atnbreak/tensor.hpp"
#include "atnbreak/vit.hpp"
#include "json.hpp"

namespace atnbreak {

enum class FormatErrorKind {
  io,
  bad_magic,
  bad_version,
  bad_dtype,
  crc_mismatch,
  truncated,
  malformed,
  config_mismatch,
  manifest,
};

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// TensorFile, little-endian:
//   "ATNT" | u16 version (1) | u16 dtype (1 = f64) | u16 rank | u64 extent * rank
//   | f64 payload (row-major) | u32 CRC-32 of the payload bytes
inline constexpr std::uint16_t kTensorFileVersion = 1;
inline constexpr std::uint16_t kDtypeF64 = 1;

std::vector<std::uint8_t> encode_tensor(const DiffArray& array);
// Decodes one TensorFile starting at bytes[0]; `consumed` receives its length.
DiffArray decode_tensor(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);
void write_tensor(const std::filesystem::path& path, const DiffArray& array);
DiffArray read_tensor(const std::filesystem::path& path);

// Checkpoint, little-endian:
//   "ATNC" | u16 version (1) | u16 reserved (0) | u64 header length
//   | header JSON | u32 CRC-32 of the header | concatenated TensorFiles
// The header carries the config, creation seed, group list and a manifest of
// {name, group, shape, offset, length}; offsets count from the first TensorFile.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ViTModel model;
  std::uint64_t seed = 0;
  nlohmann::json header;
};

std::vector<std::uint8_t> encode_checkpoint(const ViTModel& model, std::uint64_t seed,
                                            const nlohmann::json& provenance = nlohmann::json::object());
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const ViTModel& model, std::uint64_t seed,
                      const nlohmann::json& provenance = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Fails with config_mismatch unless the stored config equals `expected`.
Checkpoint read_checkpoint(const std::filesystem::path& path, const ViTConfig& expected);

// 8-bit images. One channel is stored as PGM (P5), three as PPM (P6); pixels
// map to [0, 1] by /255 on read and round to nearest on write.
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // [C, H, W]

  DiffArray to_array() const;
  static Image from_array(const DiffArray& array);
};

std::uint8_t quantize_pixel(double value);
std::vector<std::uint8_t> encode_image(const Image& image);
Image decode_image(std::span<const std::uint8_t> bytes);
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

}  // namespace atnbreak
