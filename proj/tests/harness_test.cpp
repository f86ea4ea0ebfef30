#include <gtest/gtest.h>

#include <cmath>

#include "atnbreak/harness.hpp"
#include "test_support.hpp"

namespace atnbreak {
namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.image_size = 6;
  s.train_size = 16;
  s.val_size = 16;
  s.test_size = 16;
  s.bar_min = 1;
  s.bar_max = 2;
  s.checker_cell = 1;
  s.disk_radius_min = 1.5;
  s.disk_radius_max = 2.5;
  s.disk_center_jitter = 0.5;
  return s;
}

class HarnessOnTinyModel : public ::testing::Test {
 protected:
  ViTConfig cfg = [] {
    ViTConfig c = testing::tiny_config();
    c.num_classes = 4;
    c.dense_classes = 5;
    return c;
  }();
  ViTModel model = testing::random_model(cfg, 21);
  SyntheticDataset data = generate_dataset(small_spec());
  EvalSet set = load_eval_set(data, Split::test, 8, cfg.patch_size);

  AttackConfig short_attack(LossMode mode = LossMode::comb) const {
    AttackConfig a;
    a.iterations = 10;
    a.loss_mode = mode;
    return a;
  }
};

TEST_F(HarnessOnTinyModel, ZeroBudgetMeansZeroDegradation) {
  AttackConfig a = short_attack();
  a.epsilon = 0.0;
  const auto crafted = craft_perturbations(model, set.images, a, 1);
  const auto control = control_perturbations(set.images, 0.0, 1);
  const DenseResult d = evaluate_dense(model, set, crafted, control, "fp", 1);
  EXPECT_EQ(d.clean.accuracy, d.attacked.accuracy);
  EXPECT_EQ(d.clean.miou, d.control.miou);
  const std::vector<std::size_t> ks{1, 5};
  const RetrievalResult r = evaluate_retrieval(model, set.images, crafted, control, ks, "fp", 1);
  for (const auto& m : r.attacked) EXPECT_EQ(m.value, 0.0);
  const Predictions p = predict(model, set.images, crafted, 1);
  std::vector<int> clean = predict(model, set.images, {}, 1).classes;
  EXPECT_EQ(p.classes, clean);
}

TEST_F(HarnessOnTinyModel, ParallelCraftingMatchesSerial) {
  const auto a = craft_perturbations(model, set.images, short_attack(), 1);
  const auto b = craft_perturbations(model, set.images, short_attack(), 4);
  EXPECT_EQ(a, b);
}

TEST_F(HarnessOnTinyModel, ModeComparisonGridIsCompleteAndFinite) {
  const ModeComparison c = mode_comparison_report(model, set, 8, short_attack(), 1);
  for (const auto& row : c.degradation)
    for (double v : row) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_LE(v, 1.0);
    }
  EXPECT_EQ(c.retrieval_n, 8u);
  EXPECT_EQ(c.dense_n, 8u * cfg.num_patches());
  EXPECT_LE(c.comb_at_least_min, 3u);
  const std::string table = format_comparison(c);
  for (const char* name : {"atn", "emb", "comb", "classification", "retrieval", "dense"})
    EXPECT_NE(table.find(name), std::string::npos) << name;
}

TEST_F(HarnessOnTinyModel, ModeComparisonFromCraftedMatchesRecrafting) {
  const AttackConfig a = short_attack();
  std::array<std::vector<Perturbation>, 3> crafted;
  for (std::size_t m = 0; m < kLossModes.size(); ++m) {
    AttackConfig c = a;
    c.loss_mode = kLossModes[m];
    crafted[m] = craft_perturbations(model, set.images, c, 1);
  }
  const auto control = control_perturbations(set.images, a.epsilon, a.seed);
  const ModeComparison x = mode_comparison_report(model, set, 8, a, 1);
  const ModeComparison y = mode_comparison_report(model, set, 8, crafted, control, "fp", 1);
  EXPECT_EQ(x.degradation, y.degradation);
  crafted[1].pop_back();
  EXPECT_THROW(mode_comparison_report(model, set, 8, crafted, control, "fp", 1), EvalError);
}

TEST_F(HarnessOnTinyModel, TransferMatrixShapeAndRange) {
  const std::vector<ViTModel> models{model, testing::random_model(cfg, 22)};
  std::vector<std::vector<Perturbation>> crafted;
  for (const auto& m : models) crafted.push_back(craft_perturbations(m, set.images, short_attack(), 1));
  const auto t = transfer_matrix(models, models, set, crafted, 1);
  ASSERT_EQ(t.size(), 2u);
  for (const auto& row : t) {
    ASSERT_EQ(row.size(), 2u);
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST_F(HarnessOnTinyModel, FingerprintTracksModelAndAttack) {
  const AttackConfig a = short_attack();
  EXPECT_EQ(fingerprint(model, a), fingerprint(model, a));
  AttackConfig b = a;
  b.epsilon = 4.0 / 255.0;
  EXPECT_NE(fingerprint(model, a), fingerprint(model, b));
  EXPECT_NE(fingerprint(model, a), fingerprint(testing::random_model(cfg, 99), a));
  ViTModel scaled = model;
  scaled.config.input_std = 0.2;
  EXPECT_NE(fingerprint(model, a), fingerprint(scaled, a));
}

TEST_F(HarnessOnTinyModel, SelectCorrectKeepsOnlyCorrectImages) {
  const EvalSet s = select_correct(model, data, Split::test, 3);
  const Predictions p = predict(model, s.images, {}, 1);
  EXPECT_EQ(p.classes, s.labels);
  for (std::size_t i = 1; i < s.indices.size(); ++i) EXPECT_LT(s.indices[i - 1], s.indices[i]);
  EXPECT_THROW(select_correct(model, data, Split::test, 16), EvalError);
}

TEST(MinMax, NormalizesAndGuardsConstants) {
  const std::vector<double> v{2.0, 4.0, 3.0};
  EXPECT_EQ(minmax_normalize(v), (std::vector<double>{0.0, 1.0, 0.5}));
  const std::vector<double> c(5, 0.7);
  EXPECT_EQ(minmax_normalize(c), std::vector<double>(5, 0.0));
}

TEST(Heatmap, UniformAttentionGivesZeroMap) {
  const ViTConfig cfg = testing::tiny_config();
  ViTModel m = testing::random_model(cfg, 4);
  for (auto& b : m.params.blocks)
    for (LinearParams* lin : {&b.q, &b.k}) {
      lin->weight = DiffArray::zeros(lin->weight.shape());
      lin->bias = DiffArray::zeros(lin->bias.shape());
    }
  Rng rng(1);
  const auto h = cls_attention_heatmap(m, testing::random_array(rng, cfg.image_shape(), 0.0, 1.0), 1);
  EXPECT_EQ(h, std::vector<double>(cfg.image_size * cfg.image_size, 0.0));
}

TEST(Heatmap, PatchBlocksShareValuesAndSpanUnitRange) {
  const ViTConfig cfg = testing::tiny_config();
  const ViTModel m = testing::random_model(cfg, 5, 1.0);
  Rng rng(2);
  const auto h = cls_attention_heatmap(m, testing::random_array(rng, cfg.image_shape(), 0.0, 1.0), 0);
  const std::size_t s = cfg.image_size, p = cfg.patch_size;
  double lo = 1.0, hi = 0.0;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      EXPECT_EQ(h[y * s + x], h[(y / p * p) * s + x / p * p]);
      lo = std::min(lo, h[y * s + x]);
      hi = std::max(hi, h[y * s + x]);
    }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_THROW(cls_attention_heatmap(m, DiffArray::zeros(cfg.image_shape()), 2), std::invalid_argument);
}

}  // namespace
}  // namespace atnbreak
