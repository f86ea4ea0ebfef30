#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atnbreak/tensor.hpp"

namespace atnbreak {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
  std::string fingerprint;
};

struct Rate {
  double value = 0.0;
  std::size_t n = 0;  // denominator
};

// Fraction of clean-correct inputs whose attacked prediction is wrong.
Rate attack_success_rate(std::span<const int> labels, std::span<const int> clean_pred,
                         std::span<const int> adv_pred);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Query i is matched to gallery item i, ranked by cosine similarity. A query
// counts as a success (for the attacker) when at least k other items score
// strictly higher than its true item, i.e. the true item is out of the top k.
Rate retrieval_success_at_k(std::span<const DiffArray> queries, std::span<const DiffArray> gallery,
                            std::size_t k);

struct DenseScore {
  double accuracy = 0.0;
  double miou = 0.0;  // mean over classes present in truth or prediction
  std::size_t tokens = 0;
};

DenseScore dense_score(std::span<const int> predicted, std::span<const int> truth,
                       std::size_t num_classes);

}  // namespace atnbreak
