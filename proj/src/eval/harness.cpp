#include "atnbreak/harness.hpp"

#include <algorithm>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "atnbreak/parallel.hpp"
#include "atnbreak/rng.hpp"

namespace atnbreak {
namespace {

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h_;
    return os.str();
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

MetricReport make_report(std::string metric, Rate rate, const std::string& fp) {
  return {std::move(metric), rate.value, rate.n, fp};
}

void check_count(std::size_t images, std::size_t perturbations, const char* what) {
  if (perturbations != 0 && perturbations != images) {
    throw EvalError(std::string(what) + ": " + std::to_string(perturbations) +
                    " perturbations for " + std::to_string(images) + " images");
  }
}

std::vector<int> flatten(const std::vector<std::vector<int>>& v) {
  std::vector<int> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

}  // namespace

EvalSet load_eval_set(const SyntheticDataset& data, Split split, std::size_t count,
                      std::size_t patch_size) {
  if (count > data.size(split)) {
    throw EvalError("requested " + std::to_string(count) + " samples from a " +
                    std::string(to_string(split)) + " split of " +
                    std::to_string(data.size(split)));
  }
  EvalSet set;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s = data.sample(split, i);
    set.tokens.push_back(token_labels(s, data.spec().image_size, patch_size));
    set.images.push_back(std::move(s.image));
    set.labels.push_back(s.label);
    set.indices.push_back(i);
  }
  return set;
}

EvalSet select_correct(const ViTModel& model, const SyntheticDataset& data, Split split,
                       std::size_t count) {
  EvalSet set;
  for (std::size_t i = 0; i < data.size(split) && set.size() < count; ++i) {
    Sample s = data.sample(split, i);
    const ForwardOutput out = forward(s.image, model);
    if (!out.logits || argmax(out.logits->values()) != s.label) continue;
    set.tokens.push_back(token_labels(s, data.spec().image_size, model.config.patch_size));
    set.images.push_back(std::move(s.image));
    set.labels.push_back(s.label);
    set.indices.push_back(i);
  }
  if (set.size() < count) {
    throw EvalError("only " + std::to_string(set.size()) + " correctly classified samples in " +
                    std::string(to_string(split)) + ", need " + std::to_string(count));
  }
  return set;
}

std::string fingerprint(const ViTModel& model, const AttackConfig& cfg) {
  Fnv1a h;
  const auto& c = model.config;
  for (std::size_t v : {c.image_size, c.patch_size, c.channels, c.embed_dim, c.num_heads,
                        c.num_layers, c.mlp_ratio, c.num_classes, c.dense_classes}) {
    h.value(static_cast<std::uint64_t>(v));
  }
  h.value(c.input_mean);
  h.value(c.input_std);
  for (const auto& slot : param_slots(model.params)) {
    h.bytes(slot.name.data(), slot.name.size());
    h.bytes(slot.array->values().data(), slot.array->size() * sizeof(double));
  }
  h.value(cfg.epsilon);
  h.value(cfg.eta);
  h.value(static_cast<std::uint64_t>(cfg.iterations));
  h.value(static_cast<int>(cfg.loss_mode));
  h.value(static_cast<std::uint64_t>(cfg.resolved_layer(model.config)));
  h.value(cfg.alpha);
  h.value(cfg.seed);
  h.value(static_cast<int>(cfg.init));
  h.value(cfg.adam.beta1);
  h.value(cfg.adam.beta2);
  h.value(cfg.adam.eps);
  h.value(cfg.adam.weight_decay);
  return h.hex();
}

std::vector<AttackResult> run_attacks(const ViTModel& model, std::span<const DiffArray> images,
                                      const AttackConfig& cfg, std::size_t jobs) {
  std::vector<AttackResult> out(images.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    AttackConfig local = cfg;
    local.seed = derive_seed({cfg.seed, i});
    out[i] = attack(images[i], model, local);
  });
  return out;
}

std::vector<Perturbation> craft_perturbations(const ViTModel& model,
                                              std::span<const DiffArray> images,
                                              const AttackConfig& cfg, std::size_t jobs) {
  std::vector<Perturbation> out;
  out.reserve(images.size());
  for (auto& r : run_attacks(model, images, cfg, jobs)) out.push_back(std::move(r.z_star));
  return out;
}

std::vector<Perturbation> control_perturbations(std::span<const DiffArray> images, double epsilon,
                                                std::uint64_t seed) {
  std::vector<Perturbation> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(sign_noise(images[i].values(), epsilon, derive_seed({seed, i, 0x6e6f6973ULL})));
  }
  return out;
}

Predictions predict(const ViTModel& model, std::span<const DiffArray> images,
                    std::span<const Perturbation> perturbations, std::size_t jobs) {
  check_count(images.size(), perturbations.size(), "predict");
  const std::size_t n = images.size();
  Predictions p;
  p.classes.assign(n, -1);
  p.tokens.resize(n);
  p.embeddings.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const DiffArray x =
        perturbations.empty() ? images[i] : apply_perturbation(images[i], perturbations[i]);
    const ForwardOutput out = forward(x, model);
    if (out.logits) p.classes[i] = argmax(out.logits->values());
    if (model.params.dense) {
      const DiffArray logits = dense_logits(out, model.params);
      const std::size_t c = logits.shape()[1];
      for (std::size_t t = 0; t < logits.shape()[0]; ++t) {
        p.tokens[i].push_back(argmax(logits.values().subspan(t * c, c)));
      }
    }
    p.embeddings[i] = out.embedding;
  });
  return p;
}

ClassificationResult evaluate_classification(const ViTModel& model, const EvalSet& set,
                                             std::span<const Perturbation> attacked,
                                             std::span<const Perturbation> control,
                                             const std::string& fp, std::size_t jobs) {
  if (!model.params.classifier) throw EvalError("model has no classifier head");
  check_count(set.size(), attacked.size(), "classification");
  check_count(set.size(), control.size(), "classification control");
  const Predictions clean = predict(model, set.images, {}, jobs);
  const Predictions adv = predict(model, set.images, attacked, jobs);
  const Predictions ctl = predict(model, set.images, control, jobs);
  return {make_report("classification_asr",
                      attack_success_rate(set.labels, clean.classes, adv.classes), fp),
          make_report("classification_asr_control",
                      attack_success_rate(set.labels, clean.classes, ctl.classes), fp)};
}

ClassificationResult attack_success_rate_classification(const ViTModel& model, const EvalSet& set,
                                                        const AttackConfig& cfg,
                                                        std::size_t jobs) {
  const auto attacked = craft_perturbations(model, set.images, cfg, jobs);
  const auto control = control_perturbations(set.images, cfg.epsilon, cfg.seed);
  return evaluate_classification(model, set, attacked, control, fingerprint(model, cfg), jobs);
}

RetrievalResult evaluate_retrieval(const ViTModel& model, std::span<const DiffArray> gallery,
                                   std::span<const Perturbation> attacked,
                                   std::span<const Perturbation> control,
                                   std::span<const std::size_t> ks, const std::string& fp,
                                   std::size_t jobs) {
  check_count(gallery.size(), attacked.size(), "retrieval");
  check_count(gallery.size(), control.size(), "retrieval control");
  for (std::size_t k : ks) {
    if (k == 0 || k > gallery.size()) {
      throw EvalError("retrieval: k=" + std::to_string(k) + " outside gallery of size " +
                      std::to_string(gallery.size()));
    }
  }
  const auto queries = predict(model, gallery, {}, jobs).embeddings;
  const auto adv = predict(model, gallery, attacked, jobs).embeddings;
  const auto ctl = predict(model, gallery, control, jobs).embeddings;
  RetrievalResult r;
  for (std::size_t k : ks) {
    const std::string name = "retrieval_success@" + std::to_string(k);
    r.attacked.push_back(make_report(name, atnbreak::retrieval_success_at_k(queries, adv, k), fp));
    r.control.push_back(
        make_report(name + "_control", atnbreak::retrieval_success_at_k(queries, ctl, k), fp));
  }
  return r;
}

RetrievalResult retrieval_success_at_k(const ViTModel& model, std::span<const DiffArray> gallery,
                                       std::span<const std::size_t> ks, const AttackConfig& cfg,
                                       std::size_t jobs) {
  const auto attacked = craft_perturbations(model, gallery, cfg, jobs);
  const auto control = control_perturbations(gallery, cfg.epsilon, cfg.seed);
  return evaluate_retrieval(model, gallery, attacked, control, ks, fingerprint(model, cfg), jobs);
}

DenseResult evaluate_dense(const ViTModel& model, const EvalSet& set,
                           std::span<const Perturbation> attacked,
                           std::span<const Perturbation> control, const std::string& fp,
                           std::size_t jobs) {
  if (!model.params.dense) throw EvalError("model has no dense head");
  check_count(set.size(), attacked.size(), "dense");
  check_count(set.size(), control.size(), "dense control");
  const std::size_t k = model.config.dense_classes;
  const auto truth = flatten(set.tokens);
  DenseResult r;
  r.clean = dense_score(flatten(predict(model, set.images, {}, jobs).tokens), truth, k);
  r.attacked = dense_score(flatten(predict(model, set.images, attacked, jobs).tokens), truth, k);
  r.control = dense_score(flatten(predict(model, set.images, control, jobs).tokens), truth, k);
  const std::size_t n = r.clean.tokens;
  r.reports = {
      {"dense_accuracy_clean", r.clean.accuracy, n, fp},
      {"dense_accuracy_attacked", r.attacked.accuracy, n, fp},
      {"dense_accuracy_control", r.control.accuracy, n, fp},
      {"dense_miou_clean", r.clean.miou, n, fp},
      {"dense_miou_attacked", r.attacked.miou, n, fp},
      {"dense_miou_control", r.control.miou, n, fp},
  };
  return r;
}

DenseResult dense_degradation(const ViTModel& model, const EvalSet& set, const AttackConfig& cfg,
                              std::size_t jobs) {
  const auto attacked = craft_perturbations(model, set.images, cfg, jobs);
  const auto control = control_perturbations(set.images, cfg.epsilon, cfg.seed);
  return evaluate_dense(model, set, attacked, control, fingerprint(model, cfg), jobs);
}

ModeComparison mode_comparison_report(const ViTModel& model, const EvalSet& set,
                                      std::size_t gallery_size, const AttackConfig& cfg,
                                      std::size_t jobs) {
  std::array<std::vector<Perturbation>, 3> crafted;
  for (std::size_t m = 0; m < kLossModes.size(); ++m) {
    AttackConfig mode_cfg = cfg;
    mode_cfg.loss_mode = kLossModes[m];
    crafted[m] = craft_perturbations(model, set.images, mode_cfg, jobs);
  }
  return mode_comparison_report(model, set, gallery_size, crafted,
                                control_perturbations(set.images, cfg.epsilon, cfg.seed),
                                fingerprint(model, cfg), jobs);
}

ModeComparison mode_comparison_report(const ViTModel& model, const EvalSet& set,
                                      std::size_t gallery_size,
                                      const std::array<std::vector<Perturbation>, 3>& crafted,
                                      std::span<const Perturbation> control, const std::string& fp,
                                      std::size_t jobs) {
  if (gallery_size == 0 || gallery_size > set.size()) {
    throw EvalError("gallery size " + std::to_string(gallery_size) + " outside eval set of " +
                    std::to_string(set.size()));
  }
  for (const auto& attacked : crafted) {
    if (attacked.size() != set.size() || control.size() != set.size()) {
      throw EvalError("mode comparison: perturbation count does not match eval set");
    }
  }
  ModeComparison cmp;
  const std::span<const DiffArray> gallery(set.images.data(), gallery_size);
  const std::array<std::size_t, 1> k1{1};
  for (std::size_t m = 0; m < kLossModes.size(); ++m) {
    const auto& attacked = crafted[m];
    const auto cls = evaluate_classification(model, set, attacked, control, fp, jobs);
    cmp.degradation[0][m] = cls.attacked.value;
    cmp.classification_n = cls.attacked.n;

    const auto ret = evaluate_retrieval(
        model, gallery, std::span<const Perturbation>(attacked.data(), gallery_size),
        control.subspan(0, gallery_size), k1, fp, jobs);
    cmp.degradation[1][m] = ret.attacked[0].value;
    cmp.retrieval_n = ret.attacked[0].n;

    const auto dense = evaluate_dense(model, set, attacked, control, fp, jobs);
    cmp.degradation[2][m] = dense.clean.accuracy - dense.attacked.accuracy;
    cmp.dense_n = dense.clean.tokens;
  }
  for (const auto& row : cmp.degradation) {
    if (row[2] >= std::min(row[0], row[1])) ++cmp.comb_at_least_min;
  }
  return cmp;
}

std::string format_comparison(const ModeComparison& cmp) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "task";
  for (LossMode m : kLossModes) os << std::right << std::setw(10) << to_string(m);
  os << '\n';
  for (std::size_t t = 0; t < 3; ++t) {
    os << std::left << std::setw(16) << kCompareTasks[t];
    for (std::size_t m = 0; m < 3; ++m) {
      os << std::right << std::setw(10) << std::fixed << std::setprecision(4)
         << cmp.degradation[t][m];
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::vector<double>> transfer_matrix(std::span<const ViTModel> sources,
                                                 std::span<const ViTModel> targets,
                                                 const EvalSet& set,
                                                 std::span<const std::vector<Perturbation>> crafted,
                                                 std::size_t jobs) {
  if (crafted.size() != sources.size()) {
    throw EvalError("transfer: perturbation sets do not match sources");
  }
  for (const auto& t : targets) {
    for (const auto& s : sources) {
      if (t.config.image_size != s.config.image_size || t.config.channels != s.config.channels) {
        throw ConfigError("transfer: source and target models take different image sizes");
      }
    }
    if (!t.params.classifier) throw EvalError("transfer: target model has no classifier head");
  }
  std::vector<std::vector<double>> asr(sources.size(), std::vector<double>(targets.size(), 0.0));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto clean = predict(targets[t], set.images, {}, jobs).classes;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      check_count(set.size(), crafted[s].size(), "transfer");
      const auto adv = predict(targets[t], set.images, crafted[s], jobs).classes;
      asr[s][t] = attack_success_rate(set.labels, clean, adv).value;
    }
  }
  return asr;
}

std::vector<std::vector<double>> transfer_matrix(std::span<const ViTModel> sources,
                                                 std::span<const ViTModel> targets,
                                                 const EvalSet& set, const AttackConfig& cfg,
                                                 std::size_t jobs) {
  if (sources.size() < 1 || targets.size() < 1) throw EvalError("transfer: no models");
  for (const auto& s : sources) {
    if (s.config.image_size != targets[0].config.image_size) {
      throw ConfigError("transfer: source and target models take different image sizes");
    }
  }
  std::vector<std::vector<Perturbation>> crafted;
  for (const auto& s : sources) crafted.push_back(craft_perturbations(s, set.images, cfg, jobs));
  return transfer_matrix(sources, targets, set, crafted, jobs);
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

std::vector<double> cls_attention_heatmap(const ViTModel& model, const DiffArray& image,
                                          std::size_t layer) {
  const ViTConfig& cfg = model.config;
  if (layer >= cfg.num_layers) {
    throw std::invalid_argument("layer " + std::to_string(layer) + " outside model with " +
                                std::to_string(cfg.num_layers) + " layers");
  }
  const ForwardOutput out = forward(image, model, true);
  const DiffArray& a = out.attention[layer];
  const std::size_t nt = cfg.num_tokens(), g = cfg.grid(), p = cfg.patch_size;
  std::vector<double> patch(g * g, 0.0);
  for (std::size_t h = 0; h < cfg.num_heads; ++h)
    for (std::size_t t = 0; t < g * g; ++t) patch[t] += a.at(h * nt * nt + t + 1);
  for (double& v : patch) v /= static_cast<double>(cfg.num_heads);

  const std::size_t s = cfg.image_size;
  std::vector<double> up(s * s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) up[y * s + x] = patch[(y / p) * g + x / p];
  return minmax_normalize(up);
}

}  // namespace atnbreak
