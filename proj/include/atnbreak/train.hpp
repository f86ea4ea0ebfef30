#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "atnbreak/attack.hpp"
#include "atnbreak/dataset.hpp"
#include "atnbreak/vit.hpp"

namespace atnbreak {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t warmup_steps = 50;  // then cosine decay to zero
  AdamConfig adam;
  std::uint64_t seed = 0;  // shuffling
  double dense_weight = 1.0;
  std::size_t jobs = 1;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_dense_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  double val_accuracy = 0.0;
  double val_dense_accuracy = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CleanAccuracy {
  double classification = 0.0;
  double dense = 0.0;
};

CleanAccuracy evaluate_clean(const ViTModel& model, const SyntheticDataset& data, Split split,
                             std::size_t jobs = 1);

// Cross-entropy on the classifier head plus dense_weight times per-token
// cross-entropy on the dense head (whichever heads exist). Deterministic for a
// fixed seed, independent of jobs.
TrainReport train(ViTModel& model, const SyntheticDataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace atnbreak
