#pragma once

#include <array>
#include <string>
#include <vector>

#include "atnbreak/attack.hpp"
#include "test_support.hpp"

namespace atnbreak::testing {

// One randomly drawn instance of an op for gradient checking.
struct GradCase {
  ArrayFn fn;
  std::vector<DiffArray> inputs;
  std::vector<std::size_t> frozen;
};

struct OpSpec {
  std::string name;
  std::function<GradCase(Rng&, std::size_t)> draw;
};

inline std::vector<OpSpec> gradient_ops() {
  std::vector<OpSpec> ops;
  ops.push_back({"matmul", [](Rng& r, std::size_t) {
                   const std::size_t m = dim(r), k = dim(r), n = dim(r);
                   return GradCase{[](const auto& x) { return matmul(x[0], x[1]); },
                                   {random_array(r, {m, k}), random_array(r, {k, n})}, {}};
                 }});
  ops.push_back({"transpose", [](Rng& r, std::size_t) {
                   return GradCase{[](const auto& x) { return transpose(x[0]); },
                                   {random_array(r, {dim(r), dim(r)})}, {}};
                 }});
  // Equal shapes, then a single-element operand on either side.
  auto binary = [](DiffArray (*op)(const DiffArray&, const DiffArray&)) {
    return [op](Rng& r, std::size_t i) {
      const Shape s{dim(r), dim(r)};
      DiffArray a = random_array(r, s), b = random_array(r, s);
      if (i % 3 == 1) a = random_array(r, {1});
      if (i % 3 == 2) b = random_array(r, {1});
      return GradCase{[op](const auto& x) { return op(x[0], x[1]); }, {a, b}, {}};
    };
  };
  ops.push_back({"add", binary(&add)});
  ops.push_back({"sub", binary(&sub)});
  ops.push_back({"mul", binary(&mul)});
  ops.push_back({"scale", [](Rng& r, std::size_t) {
                   const double f = r.uniform(-3.0, 3.0);
                   return GradCase{[f](const auto& x) { return scale(x[0], f); },
                                   {random_array(r, {dim(r), dim(r)})}, {}};
                 }});
  ops.push_back({"square", [](Rng& r, std::size_t) {
                   return GradCase{[](const auto& x) { return square(x[0]); },
                                   {random_array(r, {dim(r, 6)})}, {}};
                 }});
  ops.push_back({"sqrt", [](Rng& r, std::size_t) {
                   return GradCase{[](const auto& x) { return atnbreak::sqrt(x[0]); },
                                   {random_array(r, {dim(r, 6)}, 0.5, 2.0)}, {}};
                 }});
  ops.push_back({"gelu", [](Rng& r, std::size_t) {
                   return GradCase{[](const auto& x) { return gelu(x[0]); },
                                   {random_array(r, {dim(r), dim(r)}, -3.0, 3.0)}, {}};
                 }});
  ops.push_back({"add_rowwise", [](Rng& r, std::size_t i) {
                   const std::size_t m = dim(r);
                   Shape s = i % 2 ? Shape{2, dim(r), m} : Shape{dim(r), m};
                   return GradCase{[](const auto& x) { return add_rowwise(x[0], x[1]); },
                                   {random_array(r, s), random_array(r, {m})}, {}};
                 }});
  ops.push_back({"softmax_rows", [](Rng& r, std::size_t) {
                   return GradCase{[](const auto& x) { return softmax_rows(x[0]); },
                                   {random_array(r, {dim(r), dim(r, 5) + 1}, -3.0, 3.0)}, {}};
                 }});
  // Rows of width 2 normalize to exactly +/-1, leaving an O(eps) input
  // gradient that central differences cannot resolve; start at width 3.
  ops.push_back({"layer_norm", [](Rng& r, std::size_t) {
                   const std::size_t d = dim(r, 5) + 2;
                   return GradCase{[](const auto& x) { return layer_norm(x[0], x[1], x[2]); },
                                   {random_array(r, {dim(r), d}, -2.0, 2.0),
                                    random_array(r, {d}, 0.5, 1.5), random_array(r, {d})},
                                   {}};
                 }});
  auto reduction = [](ReduceKind kind) {
    return [kind](Rng& r, std::size_t i) {
      std::vector<std::size_t> axes;
      if (i % 4 == 1) axes = {0};
      if (i % 4 == 2) axes = {2};
      if (i % 4 == 3) axes = {0, 1};
      return GradCase{[kind, axes](const auto& x) { return reduce(x[0], kind, axes); },
                      {random_array(r, {dim(r, 3), dim(r, 3), dim(r, 3)})}, {}};
    };
  };
  ops.push_back({"reduce_sum", reduction(ReduceKind::sum)});
  ops.push_back({"reduce_mean", reduction(ReduceKind::mean)});
  ops.push_back({"reduce_l2norm", reduction(ReduceKind::l2norm)});
  ops.push_back({"reshape", [](Rng& r, std::size_t) {
                   const std::size_t a = dim(r), b = dim(r);
                   return GradCase{[a, b](const auto& x) { return reshape(x[0], {b, a}); },
                                   {random_array(r, {a, b})}, {}};
                 }});
  ops.push_back({"slice_rows", [](Rng& r, std::size_t) {
                   const std::size_t rows = dim(r, 5) + 1;
                   const auto begin = static_cast<std::size_t>(r.uniform_int(0, static_cast<int>(rows) - 1));
                   const auto count = static_cast<std::size_t>(r.uniform_int(1, static_cast<int>(rows - begin)));
                   return GradCase{[=](const auto& x) { return slice_rows(x[0], begin, count); },
                                   {random_array(r, {rows, dim(r)})}, {}};
                 }});
  ops.push_back({"slice_cols", [](Rng& r, std::size_t) {
                   const std::size_t cols = dim(r, 5) + 1;
                   const auto begin = static_cast<std::size_t>(r.uniform_int(0, static_cast<int>(cols) - 1));
                   const auto count = static_cast<std::size_t>(r.uniform_int(1, static_cast<int>(cols - begin)));
                   return GradCase{[=](const auto& x) { return slice_cols(x[0], begin, count); },
                                   {random_array(r, {dim(r), cols})}, {}};
                 }});
  ops.push_back({"concat_rows", [](Rng& r, std::size_t) {
                   const std::size_t n = dim(r);
                   return GradCase{[](const auto& x) { return concat_rows(x); },
                                   {random_array(r, {dim(r), n}), random_array(r, {dim(r), n}),
                                    random_array(r, {dim(r), n})},
                                   {}};
                 }});
  ops.push_back({"concat_cols", [](Rng& r, std::size_t) {
                   const std::size_t m = dim(r);
                   return GradCase{[](const auto& x) { return concat_cols(x); },
                                   {random_array(r, {m, dim(r)}), random_array(r, {m, dim(r)})},
                                   {}};
                 }});
  ops.push_back({"stack", [](Rng& r, std::size_t) {
                   const Shape s{dim(r), dim(r)};
                   return GradCase{[](const auto& x) { return stack(x); },
                                   {random_array(r, s), random_array(r, s), random_array(r, s)},
                                   {}};
                 }});
  ops.push_back({"gather", [](Rng& r, std::size_t) {
                   const std::size_t n = dim(r, 6) + 1, out = dim(r, 8);
                   std::vector<std::size_t> idx(out);
                   for (auto& v : idx) v = static_cast<std::size_t>(r.uniform_int(0, static_cast<int>(n) - 1));
                   return GradCase{[idx, out](const auto& x) { return gather(x[0], idx, {out}); },
                                   {random_array(r, {n})}, {}};
                 }});
  ops.push_back({"cross_entropy", [](Rng& r, std::size_t) {
                   const std::size_t n = dim(r), c = dim(r, 4) + 1;
                   std::vector<int> labels(n);
                   for (int& l : labels) l = r.uniform_int(0, static_cast<int>(c) - 1);
                   return GradCase{[labels](const auto& x) { return cross_entropy(x[0], labels); },
                                   {random_array(r, {n, c}, -3.0, 3.0)}, {}};
                 }});
  return ops;
}

inline constexpr std::size_t kGradCasesPerOp = 100;
inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

// Worst relative error over kGradCasesPerOp random draws of one op.
inline double worst_op_error(const OpSpec& op, std::uint64_t seed) {
  Rng rng(derive_seed({seed, std::hash<std::string>{}(op.name)}));
  double worst = 0.0;
  for (std::size_t i = 0; i < kGradCasesPerOp; ++i) {
    const GradCase c = op.draw(rng, i);
    worst = std::max(worst, gradient_error(c.fn, c.inputs, rng, 1e-5, c.frozen));
  }
  return worst;
}

// Relative error of the gradient of L_comb (beta held at its value at the
// evaluation point, as in the attack loop) with respect to z and every model
// parameter, on the tiny config.
inline double model_gradient_error(std::uint64_t seed) {
  const ViTConfig cfg = tiny_config();
  const ViTModel model = random_model(cfg, seed);
  Rng rng(derive_seed({seed, 99}));
  const DiffArray image = random_array(rng, cfg.image_shape(), 0.2, 0.8);
  const ForwardOutput clean = forward(image, model, true);
  const DiffArray a_gt = clean.attention.back(), e_gt = clean.embedding;
  const DiffArray z0 = random_array(rng, cfg.image_shape(), -0.05, 0.05);

  auto rebuild = [&](const std::vector<DiffArray>& x) {
    ViTParams p = model.params;
    auto slots = param_slots(p);
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].array = x[i + 1];
    return p;
  };
  auto losses = [&](const std::vector<DiffArray>& x) {
    const ForwardOutput out = forward(add(image, x[0]), rebuild(x), cfg, true);
    return std::pair{attention_loss(a_gt, out.attention.back()), embedding_loss(e_gt, out.embedding)};
  };

  std::vector<DiffArray> inputs{z0};
  for (const auto& slot : param_slots(model.params)) inputs.push_back(*slot.array);
  const auto [l_atn, l_emb] = losses(inputs);
  const double alpha = 1.0;
  const double beta = combined_loss(l_atn.item(), l_emb.item(), alpha).beta;
  const ArrayFn f = [&](const std::vector<DiffArray>& x) {
    const auto [a, e] = losses(x);
    return sub(scale(a, alpha), scale(e, beta));
  };
  return gradient_error(f, inputs, rng);
}

}  // namespace atnbreak::testing
