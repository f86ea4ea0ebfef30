#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atnbreak/attack.hpp"
#include "atnbreak/dataset.hpp"
#include "atnbreak/metrics.hpp"
#include "atnbreak/vit.hpp"

namespace atnbreak {

using Perturbation = std::vector<double>;

struct EvalSet {
  std::vector<DiffArray> images;
  std::vector<int> labels;
  std::vector<std::vector<int>> tokens;
  std::vector<std::size_t> indices;  // positions in the source split

  std::size_t size() const { return images.size(); }
};

// The first `count` samples of a split.
EvalSet load_eval_set(const SyntheticDataset& data, Split split, std::size_t count,
                      std::size_t patch_size);

// The first `count` samples of a split that `model` classifies correctly.
EvalSet select_correct(const ViTModel& model, const SyntheticDataset& data, Split split,
                       std::size_t count);

// Hex digest of the model parameters and attack settings.
std::string fingerprint(const ViTModel& model, const AttackConfig& cfg);

// One attack per image; image i uses seed derive_seed({cfg.seed, i}).
std::vector<Perturbation> craft_perturbations(const ViTModel& model,
                                              std::span<const DiffArray> images,
                                              const AttackConfig& cfg, std::size_t jobs);
std::vector<AttackResult> run_attacks(const ViTModel& model, std::span<const DiffArray> images,
                                      const AttackConfig& cfg, std::size_t jobs);

std::vector<Perturbation> control_perturbations(std::span<const DiffArray> images, double epsilon,
                                                std::uint64_t seed);

struct Predictions {
  std::vector<int> classes;
  std::vector<std::vector<int>> tokens;
  std::vector<DiffArray> embeddings;
};

// Forward every image (plus its perturbation when given).
Predictions predict(const ViTModel& model, std::span<const DiffArray> images,
                    std::span<const Perturbation> perturbations, std::size_t jobs);

struct ClassificationResult {
  MetricReport attacked;
  MetricReport control;
};

ClassificationResult evaluate_classification(const ViTModel& model, const EvalSet& set,
                                             std::span<const Perturbation> attacked,
                                             std::span<const Perturbation> control,
                                             const std::string& fp, std::size_t jobs);

ClassificationResult attack_success_rate_classification(const ViTModel& model, const EvalSet& set,
                                                        const AttackConfig& cfg,
                                                        std::size_t jobs);

inline constexpr std::array<std::size_t, 3> kRetrievalKs{1, 5, 10};

struct RetrievalResult {
  std::vector<MetricReport> attacked;  // one per k
  std::vector<MetricReport> control;
};

// Queries are the clean embeddings of the gallery images; the gallery holds the
// embeddings of the perturbed images.
RetrievalResult evaluate_retrieval(const ViTModel& model, std::span<const DiffArray> gallery,
                                   std::span<const Perturbation> attacked,
                                   std::span<const Perturbation> control,
                                   std::span<const std::size_t> ks, const std::string& fp,
                                   std::size_t jobs);

RetrievalResult retrieval_success_at_k(const ViTModel& model, std::span<const DiffArray> gallery,
                                       std::span<const std::size_t> ks, const AttackConfig& cfg,
                                       std::size_t jobs);

struct DenseResult {
  DenseScore clean;
  DenseScore attacked;
  DenseScore control;
  std::vector<MetricReport> reports;
};

DenseResult evaluate_dense(const ViTModel& model, const EvalSet& set,
                           std::span<const Perturbation> attacked,
                           std::span<const Perturbation> control, const std::string& fp,
                           std::size_t jobs);

DenseResult dense_degradation(const ViTModel& model, const EvalSet& set, const AttackConfig& cfg,
                              std::size_t jobs);

inline constexpr std::array<LossMode, 3> kLossModes{LossMode::atn, LossMode::emb, LossMode::comb};
inline constexpr std::array<const char*, 3> kCompareTasks{"classification", "retrieval", "dense"};

// degradation[task][mode]: classification ASR, retrieval success@1, and the
// absolute drop in dense per-token accuracy.
struct ModeComparison {
  std::array<std::array<double, 3>, 3> degradation{};
  std::size_t classification_n = 0;
  std::size_t retrieval_n = 0;
  std::size_t dense_n = 0;
  // Tasks where comb degrades at least as much as min(atn, emb).
  std::size_t comb_at_least_min = 0;
};

// `set` images feed classification (clean-correct only) and dense; the first
// `gallery_size` images form the retrieval gallery. Perturbations per mode are
// shared by all three tasks.
ModeComparison mode_comparison_report(const ViTModel& model, const EvalSet& set,
                                      std::size_t gallery_size, const AttackConfig& cfg,
                                      std::size_t jobs);

// Same, from perturbations already crafted for atn, emb and comb (in that order).
ModeComparison mode_comparison_report(const ViTModel& model, const EvalSet& set,
                                      std::size_t gallery_size,
                                      const std::array<std::vector<Perturbation>, 3>& crafted,
                                      std::span<const Perturbation> control, const std::string& fp,
                                      std::size_t jobs);

std::string format_comparison(const ModeComparison& cmp);

// asr[s][t]: perturbations crafted on source s, evaluated on target t, with
// target-clean-correct images in the denominator.
std::vector<std::vector<double>> transfer_matrix(std::span<const ViTModel> sources,
                                                 std::span<const ViTModel> targets,
                                                 const EvalSet& set, const AttackConfig& cfg,
                                                 std::size_t jobs);

std::vector<std::vector<double>> transfer_matrix(std::span<const ViTModel> sources,
                                                 std::span<const ViTModel> targets,
                                                 const EvalSet& set,
                                                 std::span<const std::vector<Perturbation>> crafted,
                                                 std::size_t jobs);

// Maps values linearly onto [0, 1]; a constant input maps to all zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

// CLS-row attention over the patch tokens of `layer`, averaged over heads,
// upsampled nearest-neighbour to the image's [H, W] and min-max normalized.
std::vector<double> cls_attention_heatmap(const ViTModel& model, const DiffArray& image,
                                          std::size_t layer);

}  // namespace atnbreak
