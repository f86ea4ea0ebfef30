#include "atnbreak/vit.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "atnbreak/rng.hpp"

namespace atnbreak {

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid ViT config: " + msg); };
  if (image_size == 0 || patch_size == 0 || channels == 0) fail("sizes must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_layers == 0) fail("num_layers must be positive");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (!(input_std > 0.0) || !std::isfinite(input_std) || !std::isfinite(input_mean)) {
    fail("input_std must be positive and finite");
  }
}

namespace {

template <typename P, typename Slot>
void collect(P& params, std::vector<Slot>& out) {
  auto put = [&](const std::string& group, const std::string& name, auto& arr) {
    out.push_back({group, group + "." + name, &arr});
  };
  auto linear = [&](const std::string& group, auto& lin) {
    put(group, "weight", lin.weight);
    put(group, "bias", lin.bias);
  };
  auto norm = [&](const std::string& group, auto& n) {
    put(group, "gain", n.gain);
    put(group, "bias", n.bias);
  };
  linear("patch_embed", params.patch_embed);
  out.push_back({"pos_embed", "pos_embed", &params.pos_embed});
  out.push_back({"cls_token", "cls_token", &params.cls_token});
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    auto& b = params.blocks[l];
    const std::string pre = "blocks." + std::to_string(l) + ".";
    norm(pre + "ln1", b.ln1);
    linear(pre + "attn.q", b.q);
    linear(pre + "attn.k", b.k);
    linear(pre + "attn.v", b.v);
    linear(pre + "attn.o", b.o);
    norm(pre + "ln2", b.ln2);
    linear(pre + "mlp.fc1", b.fc1);
    linear(pre + "mlp.fc2", b.fc2);
  }
  norm("final_norm", params.final_norm);
  if (params.classifier) {
    out.push_back({"heads", "heads.classifier.weight", &params.classifier->weight});
    out.push_back({"heads", "heads.classifier.bias", &params.classifier->bias});
  }
  if (params.dense) {
    out.push_back({"heads", "heads.dense.weight", &params.dense->weight});
    out.push_back({"heads", "heads.dense.bias", &params.dense->bias});
  }
}

}  // namespace

std::vector<ParamSlot> param_slots(ViTParams& params) {
  std::vector<ParamSlot> out;
  collect(params, out);
  return out;
}

std::vector<ConstParamSlot> param_slots(const ViTParams& params) {
  std::vector<ConstParamSlot> out;
  collect(params, out);
  return out;
}

std::size_t param_count(const ViTParams& params) {
  std::size_t n = 0;
  for (const auto& s : param_slots(params)) n += s.array->size();
  return n;
}

namespace {

DiffArray trunc_normal(Rng& rng, Shape shape) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.truncated_normal(0.02);
  return DiffArray(std::move(shape), std::move(v));
}

LinearParams init_linear(Rng& rng, std::size_t in, std::size_t out) {
  return {trunc_normal(rng, {in, out}), DiffArray::zeros({out})};
}

NormParams init_norm(std::size_t d) {
  return {DiffArray::filled({d}, 1.0), DiffArray::zeros({d})};
}

}  // namespace

ViTParams init_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed({seed, 0x7669745f696e6974ULL}));
  const std::size_t d = cfg.embed_dim;
  ViTParams p;
  p.patch_embed = init_linear(rng, cfg.patch_dim(), d);
  p.pos_embed = DiffArray::zeros({cfg.num_tokens(), d});
  p.cls_token = DiffArray::zeros({d});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    BlockParams b;
    b.ln1 = init_norm(d);
    b.q = init_linear(rng, d, d);
    b.k = init_linear(rng, d, d);
    b.v = init_linear(rng, d, d);
    b.o = init_linear(rng, d, d);
    b.ln2 = init_norm(d);
    b.fc1 = init_linear(rng, d, cfg.mlp_dim());
    b.fc2 = init_linear(rng, cfg.mlp_dim(), d);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = init_norm(d);
  if (cfg.num_classes > 0) p.classifier = init_linear(rng, d, cfg.num_classes);
  if (cfg.dense_classes > 0) p.dense = init_linear(rng, d, cfg.dense_classes);
  return p;
}

void check_params(const ViTParams& params, const ViTConfig& cfg) {
  cfg.validate();
  if (params.blocks.size() != cfg.num_layers) {
    throw ConfigError("params have " + std::to_string(params.blocks.size()) +
                      " blocks, config expects " + std::to_string(cfg.num_layers));
  }
  if (params.classifier.has_value() != (cfg.num_classes > 0) ||
      params.dense.has_value() != (cfg.dense_classes > 0)) {
    throw ConfigError("task heads do not match config");
  }
  auto expect = [](const DiffArray& a, const Shape& s, const std::string& name) {
    if (a.shape() != s) {
      throw ConfigError(name + " has shape " + shape_string(a.shape()) + ", expected " +
                        shape_string(s));
    }
  };
  ViTParams shaped = init_params(cfg, 0);
  const auto want = param_slots(shaped);
  const auto have = param_slots(params);
  for (std::size_t i = 0; i < want.size(); ++i) {
    expect(*have[i].array, want[i].array->shape(), have[i].name);
  }
}

ViTParams watch_params(Record& record, const ViTParams& params) {
  ViTParams out = params;
  for (auto& slot : param_slots(out)) *slot.array = record.watch(*slot.array);
  return out;
}

DiffArray patchify(const DiffArray& image, const ViTConfig& cfg) {
  const std::size_t p = cfg.patch_size;
  if (image.rank() != 3 || image.shape()[1] != image.shape()[2] || image.shape()[1] % p != 0) {
    throw DimensionError("patchify: image " + shape_string(image.shape()) +
                         " is not a square image divisible by patch size " + std::to_string(p));
  }
  const std::size_t c = image.shape()[0], h = image.shape()[1], g = h / p;
  std::vector<std::size_t> idx;
  idx.reserve(image.size());
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            idx.push_back(ch * h * h + (gy * p + py) * h + gx * p + px);
  return gather(image, std::move(idx), {g * g, c * p * p});
}

namespace {

DiffArray linear(const DiffArray& x, const LinearParams& lin) {
  return add_rowwise(matmul(x, lin.weight), lin.bias);
}

}  // namespace

AttentionOutput attention_forward(const DiffArray& x, const BlockParams& block,
                                  const ViTConfig& cfg) {
  const std::size_t dk = cfg.head_dim();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const DiffArray q = linear(x, block.q);
  const DiffArray k = linear(x, block.k);
  const DiffArray v = linear(x, block.v);
  std::vector<DiffArray> heads, maps;
  heads.reserve(cfg.num_heads);
  maps.reserve(cfg.num_heads);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const DiffArray qh = slice_cols(q, h * dk, dk);
    const DiffArray kh = slice_cols(k, h * dk, dk);
    const DiffArray vh = slice_cols(v, h * dk, dk);
    DiffArray a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));
    heads.push_back(matmul(a, vh));
    maps.push_back(std::move(a));
  }
  return {linear(concat_cols(heads), block.o), stack(maps)};
}

ForwardOutput forward(const DiffArray& image, const ViTParams& params, const ViTConfig& cfg,
                      bool want_attention) {
  if (image.shape() != cfg.image_shape()) {
    throw DimensionError("forward: image shape " + shape_string(image.shape()) +
                         " does not match config " + shape_string(cfg.image_shape()));
  }
  if (params.blocks.size() != cfg.num_layers) {
    throw ConfigError("forward: params/config layer count mismatch");
  }
  const std::size_t d = cfg.embed_dim;
  const DiffArray centered =
      scale(sub(image, DiffArray::scalar(cfg.input_mean)), 1.0 / cfg.input_std);
  const DiffArray patches = linear(patchify(centered, cfg), params.patch_embed);
  const std::array<DiffArray, 2> parts{reshape(params.cls_token, {1, d}), patches};
  DiffArray x = add(concat_rows(parts), params.pos_embed);

  ForwardOutput out;
  for (const auto& block : params.blocks) {
    auto attn = attention_forward(layer_norm(x, block.ln1.gain, block.ln1.bias), block, cfg);
    x = add(x, attn.out);
    if (want_attention) out.attention.push_back(std::move(attn.attention));
    const DiffArray h = layer_norm(x, block.ln2.gain, block.ln2.bias);
    x = add(x, linear(gelu(linear(h, block.fc1)), block.fc2));
  }
  out.tokens = layer_norm(x, params.final_norm.gain, params.final_norm.bias);
  out.embedding = reshape(slice_rows(out.tokens, 0, 1), {d});
  if (params.classifier) {
    out.logits = reshape(linear(reshape(out.embedding, {1, d}), *params.classifier),
                         {params.classifier->bias.size()});
  }
  return out;
}

DiffArray dense_logits(const ForwardOutput& out, const ViTParams& params) {
  if (!params.dense) throw ConfigError("model has no dense head");
  const std::size_t n = out.tokens.shape()[0];
  return linear(slice_rows(out.tokens, 1, n - 1), *params.dense);
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace atnbreak
