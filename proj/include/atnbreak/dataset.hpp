#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "atnbreak/tensor.hpp"

namespace atnbreak {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

enum class ShapeClass { horizontal_bar = 0, vertical_bar = 1, checkerboard = 2, disk = 3 };

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t num_classes = 4;
  std::size_t image_size = 32;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  double noise_std = 0.05;
  double background_min = 0.2;
  double background_max = 0.3;
  double contrast_min = 0.08;
  double contrast_max = 0.2;
  std::size_t bar_min = 3;  // bar thickness, pixels
  std::size_t bar_max = 6;
  std::size_t checker_cell = 4;
  double disk_radius_min = 10.0;
  double disk_radius_max = 13.0;
  double disk_center_jitter = 4.0;

  void validate() const;
  std::size_t size(Split split) const;
};

struct Sample {
  DiffArray image;                 // [1, S, S] in [0, 1]
  int label = 0;
  std::vector<std::uint8_t> mask;  // S*S, 1 on the shape
};

// Samples are a pure function of (spec, split, index); labels cycle through the
// classes so every split is balanced.
class SyntheticDataset {
 public:
  explicit SyntheticDataset(DatasetSpec spec);

  const DatasetSpec& spec() const { return spec_; }
  std::size_t size(Split split) const { return spec_.size(split); }
  Sample sample(Split split, std::size_t index) const;

 private:
  DatasetSpec spec_;
};

SyntheticDataset generate_dataset(const DatasetSpec& spec);

// Per-patch labels for the dense task: 0 for background, label + 1 when at least
// a quarter of the patch's pixels lie on the shape. Patch order matches patchify.
std::vector<int> token_labels(const Sample& sample, std::size_t image_size,
                              std::size_t patch_size);

}  // namespace atnbreak
