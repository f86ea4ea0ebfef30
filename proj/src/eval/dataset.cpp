#include "atnbreak/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "atnbreak/rng.hpp"

namespace atnbreak {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid dataset: " + m); };
  if (num_classes < 2 || num_classes > 4) fail("num_classes must be in [2, 4]");
  if (image_size < 4) fail("image_size must be at least 4");
  if (noise_std < 0.0) fail("noise_std must be non-negative");
  if (background_min > background_max || contrast_min > contrast_max) fail("empty intensity range");
  if (bar_min == 0 || bar_min > bar_max || bar_max > image_size) fail("bad bar thickness range");
  if (checker_cell == 0) fail("checker_cell must be positive");
  if (disk_radius_min <= 0.0 || disk_radius_min > disk_radius_max) fail("bad disk radius range");
}

std::size_t DatasetSpec::size(Split split) const {
  switch (split) {
    case Split::train:
      return train_size;
    case Split::val:
      return val_size;
    case Split::test:
      return test_size;
  }
  return 0;
}

SyntheticDataset::SyntheticDataset(DatasetSpec spec) : spec_(spec) { spec_.validate(); }

SyntheticDataset generate_dataset(const DatasetSpec& spec) { return SyntheticDataset(spec); }

Sample SyntheticDataset::sample(Split split, std::size_t index) const {
  if (index >= size(split)) {
    throw std::out_of_range("sample " + std::to_string(index) + " outside " +
                            std::string(to_string(split)) + " split of size " +
                            std::to_string(size(split)));
  }
  const std::size_t s = spec_.image_size;
  Rng rng(derive_seed({spec_.seed, static_cast<std::uint64_t>(split), index}));

  Sample out;
  out.label = static_cast<int>(index % spec_.num_classes);
  out.mask.assign(s * s, 0);
  const auto cls = static_cast<ShapeClass>(out.label);
  switch (cls) {
    case ShapeClass::horizontal_bar:
    case ShapeClass::vertical_bar: {
      const int t = rng.uniform_int(static_cast<int>(spec_.bar_min), static_cast<int>(spec_.bar_max));
      const int start = rng.uniform_int(0, static_cast<int>(s) - t);
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const int coord = static_cast<int>(cls == ShapeClass::horizontal_bar ? y : x);
          if (coord >= start && coord < start + t) out.mask[y * s + x] = 1;
        }
      break;
    }
    case ShapeClass::checkerboard: {
      const std::size_t cell = spec_.checker_cell;
      const auto ox = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(2 * cell) - 1));
      const auto oy = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(2 * cell) - 1));
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          out.mask[y * s + x] = (((x + ox) / cell + (y + oy) / cell) % 2 == 0) ? 1 : 0;
      break;
    }
    case ShapeClass::disk: {
      const double mid = static_cast<double>(s) / 2.0 - 0.5;
      const double cx = mid + rng.uniform(-spec_.disk_center_jitter, spec_.disk_center_jitter);
      const double cy = mid + rng.uniform(-spec_.disk_center_jitter, spec_.disk_center_jitter);
      const double r = rng.uniform(spec_.disk_radius_min, spec_.disk_radius_max);
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          if (dx * dx + dy * dy <= r * r) out.mask[y * s + x] = 1;
        }
      break;
    }
  }

  const double background = rng.uniform(spec_.background_min, spec_.background_max);
  const double foreground =
      std::min(1.0, background + rng.uniform(spec_.contrast_min, spec_.contrast_max));
  std::vector<double> pixels(s * s);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double base = out.mask[i] ? foreground : background;
    pixels[i] = std::clamp(base + spec_.noise_std * rng.normal(), 0.0, 1.0);
  }
  out.image = DiffArray({1, s, s}, std::move(pixels));
  return out;
}

std::vector<int> token_labels(const Sample& sample, std::size_t image_size,
                              std::size_t patch_size) {
  if (patch_size == 0 || image_size % patch_size != 0 ||
      sample.mask.size() != image_size * image_size) {
    throw std::invalid_argument("token_labels: mask does not tile into patches of " +
                                std::to_string(patch_size));
  }
  const std::size_t g = image_size / patch_size;
  std::vector<int> out(g * g, 0);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      std::size_t on = 0;
      for (std::size_t py = 0; py < patch_size; ++py)
        for (std::size_t px = 0; px < patch_size; ++px)
          on += sample.mask[(gy * patch_size + py) * image_size + gx * patch_size + px];
      if (4 * on >= patch_size * patch_size) out[gy * g + gx] = sample.label + 1;
    }
  return out;
}

}  // namespace atnbreak
