#include "atnbreak/metrics.hpp"

#include <cmath>

namespace atnbreak {

Rate attack_success_rate(std::span<const int> labels, std::span<const int> clean_pred,
                         std::span<const int> adv_pred) {
  if (labels.size() != clean_pred.size() || labels.size() != adv_pred.size()) {
    throw EvalError("attack_success_rate: label/prediction counts differ");
  }
  std::size_t eligible = 0, flipped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (clean_pred[i] != labels[i]) continue;
    ++eligible;
    if (adv_pred[i] != labels[i]) ++flipped;
  }
  if (eligible == 0) throw EvalError("attack_success_rate: no correctly classified clean inputs");
  return {static_cast<double>(flipped) / static_cast<double>(eligible), eligible};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw EvalError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Rate retrieval_success_at_k(std::span<const DiffArray> queries, std::span<const DiffArray> gallery,
                            std::size_t k) {
  if (queries.size() != gallery.size()) {
    throw EvalError("retrieval: " + std::to_string(queries.size()) + " queries for " +
                    std::to_string(gallery.size()) + " gallery items");
  }
  if (k == 0 || k > gallery.size()) {
    throw EvalError("retrieval: k=" + std::to_string(k) + " outside gallery of size " +
                    std::to_string(gallery.size()));
  }
  std::size_t missed = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double own = cosine_similarity(queries[q].values(), gallery[q].values());
    std::size_t better = 0;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (j != q && cosine_similarity(queries[q].values(), gallery[j].values()) > own) ++better;
    }
    if (better >= k) ++missed;
  }
  return {static_cast<double>(missed) / static_cast<double>(queries.size()), queries.size()};
}

DenseScore dense_score(std::span<const int> predicted, std::span<const int> truth,
                       std::size_t num_classes) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw EvalError("dense_score: prediction/truth sizes differ or are empty");
  }
  std::vector<std::size_t> inter(num_classes, 0), pred_count(num_classes, 0),
      true_count(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(t) >= num_classes) {
      throw EvalError("dense_score: class index outside [0, " + std::to_string(num_classes) + ")");
    }
    ++pred_count[p];
    ++true_count[t];
    if (p == t) {
      ++correct;
      ++inter[t];
    }
  }
  double iou_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t uni = pred_count[c] + true_count[c] - inter[c];
    if (uni == 0) continue;
    iou_sum += static_cast<double>(inter[c]) / static_cast<double>(uni);
    ++present;
  }
  return {static_cast<double>(correct) / static_cast<double>(truth.size()),
          present ? iou_sum / static_cast<double>(present) : 0.0, truth.size()};
}

}  // namespace atnbreak
