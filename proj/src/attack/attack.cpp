#include "atnbreak/attack.hpp"

#include <algorithm>
#include <cmath>

#include "atnbreak/rng.hpp"

namespace atnbreak {

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::atn:
      return "atn";
    case LossMode::emb:
      return "emb";
    case LossMode::comb:
      return "comb";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "atn") return LossMode::atn;
  if (text == "emb") return LossMode::emb;
  if (text == "comb") return LossMode::comb;
  throw std::invalid_argument("unknown loss mode '" + std::string(text) +
                              "' (expected atn, emb or comb)");
}

std::string_view to_string(ZInit init) {
  switch (init) {
    case ZInit::by_mode:
      return "by_mode";
    case ZInit::zero:
      return "zero";
    case ZInit::uniform:
      return "uniform";
  }
  return "?";
}

ZInit parse_z_init(std::string_view text) {
  if (text == "by_mode") return ZInit::by_mode;
  if (text == "zero") return ZInit::zero;
  if (text == "uniform") return ZInit::uniform;
  throw std::invalid_argument("unknown z init '" + std::string(text) +
                              "' (expected by_mode, zero or uniform)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || epsilon > 1.0) {
    throw std::invalid_argument("epsilon must be in [0, 1], got " + std::to_string(epsilon));
  }
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (iterations == 0) throw std::invalid_argument("iterations must be at least 1");
  if (!std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite");
}

std::size_t AttackConfig::resolved_layer(const ViTConfig& vit) const {
  const std::size_t layer = target_layer.value_or(vit.num_layers - 1);
  if (layer >= vit.num_layers) {
    throw std::invalid_argument("target layer " + std::to_string(layer) + " outside model with " +
                                std::to_string(vit.num_layers) + " layers");
  }
  return layer;
}

void adamw_update(std::span<double> x, std::span<const double> grad, AdamState& state, double lr,
                  const AdamConfig& cfg) {
  if (grad.size() != x.size()) {
    throw DimensionError("adamw: gradient has " + std::to_string(grad.size()) +
                         " entries, parameters " + std::to_string(x.size()));
  }
  if (state.m.empty()) {
    state.m.assign(x.size(), 0.0);
    state.v.assign(x.size(), 0.0);
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    x[i] -= lr * cfg.weight_decay * x[i];
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

PerturbationState adamw_step(PerturbationState state, std::span<const double> grad,
                             const AttackConfig& cfg) {
  adamw_update(state.z, grad, state.adam, cfg.eta, cfg.adam);
  return state;
}

std::vector<double> project(std::span<const double> z, double epsilon,
                            std::span<const double> image) {
  if (z.size() != image.size()) {
    throw DimensionError("project: perturbation has " + std::to_string(z.size()) +
                         " entries, image " + std::to_string(image.size()));
  }
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    // Equivalent to clamping z to the budget and then x + z to [0, 1], but
    // without the rounding of a round trip through the pixel value.
    const double lo = std::max(-epsilon, -image[i]);
    const double hi = std::min(epsilon, 1.0 - image[i]);
    out[i] = std::clamp(z[i], lo, std::max(lo, hi));
  }
  return out;
}

DiffArray attention_loss(const DiffArray& a_gt, const DiffArray& a_adv) {
  if (a_gt.shape() != a_adv.shape() || a_gt.rank() != 3 ||
      a_gt.shape()[1] != a_gt.shape()[2] || a_gt.shape()[1] < 2) {
    throw DimensionError("attention_loss: stacks " + shape_string(a_gt.shape()) + " and " +
                         shape_string(a_adv.shape()) + " are not matching [N_h, N_t, N_t]");
  }
  const std::size_t heads = a_gt.shape()[0], nt = a_gt.shape()[1];
  const double norm = 1.0 / static_cast<double>((nt - 1) * (nt - 1));
  const auto gt = a_gt.values();
  std::vector<double> weight(a_gt.size(), 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 1; r < nt; ++r)
      for (std::size_t c = 1; c < nt; ++c) {
        const std::size_t i = (h * nt + r) * nt + c;
        weight[i] = gt[i] * norm;
      }
  return sum(mul(DiffArray(a_gt.shape(), std::move(weight)), a_adv));
}

DiffArray embedding_loss(const DiffArray& e_gt, const DiffArray& e_adv) {
  if (e_gt.shape() != e_adv.shape()) {
    throw DimensionError("embedding_loss: lengths differ, " + shape_string(e_gt.shape()) +
                         " vs " + shape_string(e_adv.shape()));
  }
  return l2norm(sub(e_adv, e_gt.detached()));
}

CombinedLoss combined_loss(double l_atn, double l_emb, double alpha) {
  const double beta =
      std::abs(l_emb) > kBalanceFloor ? alpha * std::abs(l_atn) / std::abs(l_emb) : 0.0;
  return {alpha * l_atn - beta * l_emb, beta};
}

std::vector<double> sign_noise(std::span<const double> image, double epsilon, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x7369676eULL}));
  std::vector<double> z(image.size());
  for (double& v : z) v = (rng.next_u64() >> 63) ? epsilon : -epsilon;
  return project(z, epsilon, image);
}

DiffArray apply_perturbation(const DiffArray& image, std::span<const double> z) {
  if (z.size() != image.size()) {
    throw DimensionError("perturbation has " + std::to_string(z.size()) +
                         " entries, image shape " + shape_string(image.shape()));
  }
  std::vector<double> x(image.values().begin(), image.values().end());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[i];
  return DiffArray(image.shape(), std::move(x));
}

AttackResult attack(const DiffArray& image, const ViTModel& model, const AttackConfig& cfg,
                    const IterateObserver& observer) {
  cfg.validate();
  const std::size_t layer = cfg.resolved_layer(model.config);
  const DiffArray clean = image.detached();

  const ForwardOutput gt = forward(clean, model, true);
  const DiffArray a_gt = gt.attention[layer].detached();
  const DiffArray e_gt = gt.embedding.detached();

  PerturbationState state;
  state.z.assign(clean.size(), 0.0);
  const bool uniform_start =
      cfg.init == ZInit::uniform || (cfg.init == ZInit::by_mode && cfg.loss_mode == LossMode::emb);
  if (uniform_start) {
    Rng rng(derive_seed({cfg.seed, 0x7a696e6974ULL}));
    for (double& v : state.z) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
    state.z = project(state.z, cfg.epsilon, clean.values());
  }

  AttackResult result;
  result.shape = clean.shape();
  result.trace.reserve(cfg.iterations);
  Record record;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const DiffArray z = record.watch(DiffArray(clean.shape(), state.z));
    const ForwardOutput out = forward(add(clean, z), model, true);
    const DiffArray l_atn = attention_loss(a_gt, out.attention[layer]);
    const DiffArray l_emb = embedding_loss(e_gt, out.embedding);
    const CombinedLoss comb = combined_loss(l_atn.item(), l_emb.item(), cfg.alpha);

    DiffArray objective;
    switch (cfg.loss_mode) {
      case LossMode::atn:
        objective = scale(l_atn, cfg.alpha);
        break;
      case LossMode::emb:
        objective = scale(l_emb, -1.0);
        break;
      case LossMode::comb:
        objective = sub(scale(l_atn, cfg.alpha), scale(l_emb, comb.beta));
        break;
    }
    if (!std::isfinite(objective.item()) || !std::isfinite(comb.value)) {
      throw AttackError("non-finite loss at iteration " + std::to_string(it) + " (L_atn=" +
                            std::to_string(l_atn.item()) + ", L_emb=" +
                            std::to_string(l_emb.item()) + ")",
                        it);
    }

    const GradientMap grads = record.backward(objective);
    state = adamw_step(std::move(state), grads.of(z).values(), cfg);
    state.z = project(state.z, cfg.epsilon, clean.values());

    double linf = 0.0;
    for (double v : state.z) linf = std::max(linf, std::abs(v));
    result.trace.push_back({it, l_atn.item(), l_emb.item(), comb.value, comb.beta, linf});
    if (observer) observer(it, state.z);
  }

  result.z_star = std::move(state.z);
  const ForwardOutput fin = forward(apply_perturbation(clean, result.z_star), model, true);
  result.final_embedding_distance = embedding_loss(e_gt, fin.embedding).item();
  result.final_attention_loss = attention_loss(a_gt, fin.attention[layer]).item();
  return result;
}

}  // namespace atnbreak
