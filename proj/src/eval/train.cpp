#include "atnbreak/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "atnbreak/parallel.hpp"
#include "atnbreak/rng.hpp"

namespace atnbreak {
namespace {

struct Example {
  DiffArray image;
  int label;
  std::vector<int> tokens;
};

std::vector<Example> load(const SyntheticDataset& data, Split split, const ViTConfig& cfg) {
  std::vector<Example> out;
  out.reserve(data.size(split));
  for (std::size_t i = 0; i < data.size(split); ++i) {
    Sample s = data.sample(split, i);
    auto tokens = token_labels(s, data.spec().image_size, cfg.patch_size);
    out.push_back({std::move(s.image), s.label, std::move(tokens)});
  }
  return out;
}

}  // namespace

CleanAccuracy evaluate_clean(const ViTModel& model, const SyntheticDataset& data, Split split,
                             std::size_t jobs) {
  const std::size_t n = data.size(split);
  if (n == 0) return {};
  std::vector<std::size_t> cls_ok(n, 0), tok_ok(n, 0), tok_n(n, 0);
  parallel_for(n, jobs, [&](std::size_t i) {
    const Sample s = data.sample(split, i);
    const ForwardOutput out = forward(s.image, model);
    if (out.logits && argmax(out.logits->values()) == s.label) cls_ok[i] = 1;
    if (model.params.dense) {
      const auto truth = token_labels(s, data.spec().image_size, model.config.patch_size);
      const DiffArray logits = dense_logits(out, model.params);
      const std::size_t c = logits.shape()[1];
      for (std::size_t t = 0; t < truth.size(); ++t) {
        if (argmax(logits.values().subspan(t * c, c)) == truth[t]) ++tok_ok[i];
      }
      tok_n[i] = truth.size();
    }
  });
  const auto total = [](const std::vector<std::size_t>& v) {
    return static_cast<double>(std::accumulate(v.begin(), v.end(), std::size_t{0}));
  };
  CleanAccuracy acc;
  acc.classification = total(cls_ok) / static_cast<double>(n);
  const double tokens = total(tok_n);
  acc.dense = tokens > 0 ? total(tok_ok) / tokens : 0.0;
  return acc;
}

TrainReport train(ViTModel& model, const SyntheticDataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  check_params(model.params, model.config);
  if (data.spec().image_size != model.config.image_size) {
    throw ConfigError("dataset image_size " + std::to_string(data.spec().image_size) +
                      " does not match model image_size " +
                      std::to_string(model.config.image_size));
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!model.params.classifier && !model.params.dense) {
    throw ConfigError("model has no task head to train");
  }

  TrainReport report;
  if (cfg.epochs > 0) {
    const std::vector<Example> examples = load(data, Split::train, model.config);
    const std::size_t n = examples.size();
    if (n == 0) throw std::invalid_argument("empty training split");

    auto slots = param_slots(model.params);
    std::vector<AdamState> adam(slots.size());
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    std::size_t step = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({cfg.seed, 0x73687566ULL}));

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(shuffle_rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
      }
      double epoch_loss = 0.0;
      for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
        const std::size_t bn = std::min(cfg.batch_size, n - b0);
        std::vector<std::vector<std::vector<double>>> sample_grads(bn);
        std::vector<double> sample_loss(bn, 0.0);
        parallel_for(bn, cfg.jobs, [&](std::size_t k) {
          const Example& ex = examples[order[b0 + k]];
          Record record;
          const ViTParams tracked = watch_params(record, model.params);
          const ForwardOutput out = forward(ex.image, tracked, model.config);
          DiffArray loss = DiffArray::scalar(0.0);
          if (out.logits) {
            const int label = ex.label;
            loss = add(loss, cross_entropy(reshape(*out.logits, {1, out.logits->size()}),
                                           std::span<const int>(&label, 1)));
          }
          if (tracked.dense) {
            loss = add(loss, scale(cross_entropy(dense_logits(out, tracked), ex.tokens),
                                   cfg.dense_weight));
          }
          sample_loss[k] = loss.item();
          const GradientMap grads = record.backward(loss);
          const auto tslots = param_slots(tracked);
          auto& dst = sample_grads[k];
          dst.reserve(tslots.size());
          for (const auto& s : tslots) {
            const auto g = grads.of(*s.array).values();
            dst.emplace_back(g.begin(), g.end());
          }
        });

        double batch_loss = 0.0;
        for (double l : sample_loss) batch_loss += l;
        if (!std::isfinite(batch_loss)) {
          throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step + 1));
        }
        epoch_loss += batch_loss;

        ++step;
        double lr = cfg.lr;
        if (step <= cfg.warmup_steps) {
          lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
        } else if (total_steps > cfg.warmup_steps) {
          const double progress = static_cast<double>(step - cfg.warmup_steps) /
                                  static_cast<double>(total_steps - cfg.warmup_steps);
          lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        }
        const double inv_bn = 1.0 / static_cast<double>(bn);
        for (std::size_t p = 0; p < slots.size(); ++p) {
          std::vector<double> grad(slots[p].array->size(), 0.0);
          for (std::size_t k = 0; k < bn; ++k)
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += sample_grads[k][p][i];
          for (double& g : grad) g *= inv_bn;
          std::vector<double> values(slots[p].array->values().begin(),
                                     slots[p].array->values().end());
          adamw_update(values, grad, adam[p], lr, cfg.adam);
          *slots[p].array = DiffArray(slots[p].array->shape(), std::move(values));
        }
      }

      const CleanAccuracy val = evaluate_clean(model, data, Split::val, cfg.jobs);
      EpochLog log{epoch, epoch_loss / static_cast<double>(n), val.classification, val.dense};
      report.epochs.push_back(log);
      if (on_epoch) on_epoch(log);
    }
  }

  if (report.epochs.empty()) {
    const CleanAccuracy val = evaluate_clean(model, data, Split::val, cfg.jobs);
    report.val_accuracy = val.classification;
    report.val_dense_accuracy = val.dense;
  } else {
    report.val_accuracy = report.epochs.back().val_accuracy;
    report.val_dense_accuracy = report.epochs.back().val_dense_accuracy;
  }
  return report;
}

}  // namespace atnbreak
