#include <algorithm>
#include <cctype>
#include <cmath>

#include "atnbreak/io.hpp"

namespace atnbreak {

DiffArray Image::to_array() const { return DiffArray({channels, height, width}, pixels); }

Image Image::from_array(const DiffArray& array) {
  if (array.rank() != 3 || (array.shape()[0] != 1 && array.shape()[0] != 3)) {
    throw DimensionError("image array must be [1|3, H, W], got " + shape_string(array.shape()));
  }
  Image img;
  img.channels = array.shape()[0];
  img.height = array.shape()[1];
  img.width = array.shape()[2];
  img.pixels.assign(array.values().begin(), array.values().end());
  return img;
}

std::uint8_t quantize_pixel(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> encode_image(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw FormatError(FormatErrorKind::malformed, "image: only 1 or 3 channels are supported");
  }
  if (img.pixels.size() != img.channels * img.height * img.width) {
    throw FormatError(FormatErrorKind::malformed, "image: pixel count does not match dimensions");
  }
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) out.push_back(quantize_pixel(img.pixels[c * plane + i]));
  return out;
}

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t number() {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) {
      throw FormatError(FormatErrorKind::malformed, "image: malformed header");
    }
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1u << 24)) throw FormatError(FormatErrorKind::malformed, "image: dimension too large");
    }
    return v;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  void end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) {
      throw FormatError(FormatErrorKind::malformed, "image: malformed header");
    }
    ++pos_;
  }
  std::size_t position() const { return pos_; }

 private:
  void skip_space() {
    for (;;) {
      while (pos_ < b_.size() && std::isspace(b_[pos_])) ++pos_;
      if (pos_ < b_.size() && b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
        continue;
      }
      return;
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(FormatErrorKind::bad_magic, "image: not a binary PGM/PPM file");
  }
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderParser p(bytes);
  img.width = p.number();
  img.height = p.number();
  const std::size_t maxval = p.number();
  if (img.width == 0 || img.height == 0) throw FormatError(FormatErrorKind::malformed, "image: zero dimension");
  if (maxval != 255) throw FormatError(FormatErrorKind::malformed, "image: only maxval 255 is supported");
  p.end_of_header();
  const std::size_t plane = img.width * img.height;
  const std::size_t need = plane * img.channels;
  if (bytes.size() - p.position() != need) {
    throw FormatError(bytes.size() - p.position() < need ? FormatErrorKind::truncated
                                                         : FormatErrorKind::malformed,
                      "image: raster has " + std::to_string(bytes.size() - p.position()) +
                          " bytes, expected " + std::to_string(need));
  }
  img.pixels.resize(need);
  const auto* raster = bytes.data() + p.position();
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < img.channels; ++c)
      img.pixels[c * plane + i] = raster[i * img.channels + c] / 255.0;
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  write_file_atomic(path, encode_image(image));
}

Image read_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

}  // namespace atnbreak
