#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atnbreak/tensor.hpp"

namespace atnbreak {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 4;
  std::size_t mlp_ratio = 4;
  // Classes of the CLS probe head; 0 disables it.
  std::size_t num_classes = 4;
  // Per-token classes of the dense head; 0 disables it.
  std::size_t dense_classes = 5;
  // Pixels enter the network as (x - input_mean) / input_std.
  double input_mean = 0.5;
  double input_std = 0.07;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }
  Shape image_shape() const { return {channels, image_size, image_size}; }

  bool operator==(const ViTConfig&) const = default;
};

struct LinearParams {
  DiffArray weight;  // [in, out]
  DiffArray bias;    // [out]
};

struct NormParams {
  DiffArray gain;
  DiffArray bias;
};

struct BlockParams {
  NormParams ln1;
  LinearParams q, k, v, o;
  NormParams ln2;
  LinearParams fc1, fc2;
};

struct ViTParams {
  LinearParams patch_embed;
  DiffArray pos_embed;  // [N_t, d]
  DiffArray cls_token;  // [d]
  std::vector<BlockParams> blocks;
  NormParams final_norm;
  std::optional<LinearParams> classifier;
  std::optional<LinearParams> dense;
};

template <typename Array>
struct ParamSlotT {
  std::string group;
  std::string name;
  Array* array;
};
using ParamSlot = ParamSlotT<DiffArray>;
using ConstParamSlot = ParamSlotT<const DiffArray>;

// Every parameter tensor in a fixed canonical order. Groups: patch_embed,
// pos_embed, cls_token, 8 per block, final_norm, heads.
std::vector<ParamSlot> param_slots(ViTParams& params);
std::vector<ConstParamSlot> param_slots(const ViTParams& params);
std::size_t param_count(const ViTParams& params);

// Truncated normal (std 0.02, cut at 2 std) weights; zero biases, CLS and
// positional embeddings; unit layer-norm gains.
ViTParams init_params(const ViTConfig& cfg, std::uint64_t seed);

// Checks every tensor shape against cfg.
void check_params(const ViTParams& params, const ViTConfig& cfg);

// Copy of params where every tensor is a watched leaf of `record`.
ViTParams watch_params(Record& record, const ViTParams& params);

struct ViTModel {
  ViTConfig config;
  ViTParams params;
};

// Per layer, [N_h, N_t, N_t].
using AttentionStack = std::vector<DiffArray>;

struct ForwardOutput {
  DiffArray embedding;  // [d], final-norm CLS feature
  DiffArray tokens;     // [N_t, d], after final norm
  AttentionStack attention;
  std::optional<DiffArray> logits;  // [num_classes] when a classifier is present
};

// [C, H, W] -> [(H/p)^2, C p^2]; patches in row-major grid order, each
// flattened channel, row, column.
DiffArray patchify(const DiffArray& image, const ViTConfig& cfg);

struct AttentionOutput {
  DiffArray out;        // [N_t, d], before the residual add
  DiffArray attention;  // [N_h, N_t, N_t]
};

AttentionOutput attention_forward(const DiffArray& x, const BlockParams& block,
                                  const ViTConfig& cfg);

ForwardOutput forward(const DiffArray& image, const ViTParams& params, const ViTConfig& cfg,
                      bool want_attention = false);
inline ForwardOutput forward(const DiffArray& image, const ViTModel& model,
                             bool want_attention = false) {
  return forward(image, model.params, model.config, want_attention);
}

// Dense head on the patch tokens: [N_t - 1, dense_classes].
DiffArray dense_logits(const ForwardOutput& out, const ViTParams& params);

int argmax(std::span<const double> values);

}  // namespace atnbreak
