#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "advbench/models.hpp"
#include "advbench/rng.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

struct AttackConfig {
  float epsilon = 8.0f / 255.0f;    // L-inf radius around the baseline
  float step_size = 2.0f / 255.0f;  // epsilon / 4
  std::size_t num_steps = 40;
  std::size_t num_eot = 10;
  int eot_max_shift = 2;
  float clamp_lo = 0.0f;
  float clamp_hi = 1.0f;
  std::uint64_t seed = 0;
  bool random_start = false;
  bool targeted = false;
  std::vector<int> targets;  // per sample, targeted attacks only

  void validate() const;
};

/// ||a - b||_inf in 64-bit.
double linf_distance(const Tensor& a, const Tensor& b);

/// Clamps (x - baseline) to [-eps, eps], rebuilds baseline + eta, then clamps
/// to [lo, hi]. Coordinates that float rounding leaves just outside the ball
/// are stepped toward the baseline, so ||result - baseline||_inf <= eps holds
/// exactly when the baseline itself is inside [lo, hi].
Tensor project_linf(const Tensor& x, const Tensor& baseline, float eps, float lo, float hi);

/// Mean over num_eot random shifts of d loss(shift(x)) / d x. With
/// `loss_out`, the mean loss is written there.
Tensor eot_gradient(const Classifier& model, const Tensor& x, int label, std::size_t num_eot, int max_shift, Rng& rng,
                    float* loss_out = nullptr);

struct SampleAttack {
  Tensor adversarial;
  bool success = false;
  int prediction = 0;
  std::vector<float> loss_trace;  // EOT-mean loss before each step
};

/// PGD from `start`, projected onto the eps-ball around `baseline` after
/// every step: step on sign(gradient), clamp the perturbation, reconstruct,
/// clamp to the valid range.
SampleAttack pgd_attack_sample(const Classifier& model, const Tensor& start, int label, const Tensor& baseline,
                               const AttackConfig& cfg, std::uint64_t rng_seed, std::optional<int> target = std::nullopt);

struct AttackResult {
  std::vector<Tensor> adversarial;
  std::vector<std::uint8_t> success;
  std::vector<int> predictions;
  std::vector<float> loss_trace;  // per step, mean over the batch
};

/// Batch PGD. Sample i draws its EOT shifts from stream_seed(cfg.seed, {i}),
/// so results do not depend on `jobs`.
AttackResult pgd_attack(const Classifier& model, std::span<const Tensor> x, std::span<const int> labels,
                        const AttackConfig& cfg, std::span<const Tensor> baseline, std::size_t jobs = 1);

}  // namespace advbench
