#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atnbreak/tensor.hpp"
#include "atnbreak/vit.hpp"

namespace atnbreak {

enum class LossMode { atn, emb, comb };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

// Starting point of z. by_mode: zero for atn/comb, uniform for emb (z = 0 is a
// stationary point of the embedding distance, whose gradient is zero there).
enum class ZInit { by_mode, zero, uniform };

std::string_view to_string(ZInit init);
ZInit parse_z_init(std::string_view text);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled decay. Kept at 0 for attacks: decaying z pulls it back to the clean image.
  double weight_decay = 0.0;
};

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double eta = 0.01;
  std::size_t iterations = 250;
  LossMode loss_mode = LossMode::comb;
  // Layer whose attention is attacked; nullopt means the last layer.
  std::optional<std::size_t> target_layer;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  ZInit init = ZInit::by_mode;
  AdamConfig adam;

  void validate() const;
  std::size_t resolved_layer(const ViTConfig& vit) const;
};

class AttackError : public std::runtime_error {
 public:
  AttackError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

// One AdamW step with bias correction on `x` in place.
void adamw_update(std::span<double> x, std::span<const double> grad, AdamState& state, double lr,
                  const AdamConfig& cfg);

struct PerturbationState {
  std::vector<double> z;
  AdamState adam;
};

PerturbationState adamw_step(PerturbationState state, std::span<const double> grad,
                             const AttackConfig& cfg);

// Clamps z to [-eps, eps], then shifts it so image + z stays in [0, 1].
std::vector<double> project(std::span<const double> z, double epsilon,
                            std::span<const double> image);

// Sum over heads of the mean of A_gt * A_adv over rows/cols 1.. (CLS excluded).
// Gradient flows only into a_adv.
DiffArray attention_loss(const DiffArray& a_gt, const DiffArray& a_adv);

// ||e_gt - e_adv||_2; gradient flows only into e_adv.
DiffArray embedding_loss(const DiffArray& e_gt, const DiffArray& e_adv);

inline constexpr double kBalanceFloor = 1e-12;

struct CombinedLoss {
  double value;  // alpha * L_atn - beta * L_emb
  double beta;   // alpha |L_atn| / |L_emb|, or 0 when |L_emb| <= 1e-12
};

CombinedLoss combined_loss(double l_atn, double l_emb, double alpha);

struct TraceEntry {
  std::size_t iteration;
  double l_atn;
  double l_emb;
  double l_comb;
  double beta;
  double z_linf;  // after the update and projection
};

struct AttackResult {
  Shape shape;
  std::vector<double> z_star;
  std::vector<TraceEntry> trace;
  double final_embedding_distance = 0.0;
  double final_attention_loss = 0.0;

  DiffArray perturbation() const { return DiffArray(shape, z_star); }
};

// Called after every update with the projected iterate.
using IterateObserver = std::function<void(std::size_t iteration, std::span<const double> z)>;

AttackResult attack(const DiffArray& image, const ViTModel& model, const AttackConfig& cfg,
                    const IterateObserver& observer = {});

// Random +/-eps sign noise, projected; the unoptimized control.
std::vector<double> sign_noise(std::span<const double> image, double epsilon, std::uint64_t seed);

DiffArray apply_perturbation(const DiffArray& image, std::span<const double> z);

}  // namespace atnbreak
