#include "advbench/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "advbench/parallel.hpp"
#include "advbench/transforms.hpp"

namespace advbench {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0f && epsilon <= 1.0f)) throw std::invalid_argument("attack config: epsilon must lie in [0, 1]");
  if (!(step_size > 0.0f) || !std::isfinite(step_size)) throw std::invalid_argument("attack config: step size must be > 0");
  if (num_steps < 1) throw std::invalid_argument("attack config: num_steps must be >= 1");
  if (num_eot < 1) throw std::invalid_argument("attack config: num_eot must be >= 1");
  if (eot_max_shift < 0) throw std::invalid_argument("attack config: EOT shift must be >= 0");
  if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("attack config: clamp_lo must be < clamp_hi");
}

double linf_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("linf: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

Tensor project_linf(const Tensor& x, const Tensor& baseline, float eps, float lo, float hi) {
  if (x.shape() != baseline.shape()) throw std::invalid_argument("project_linf: shape mismatch");
  Tensor out(x.shape());
  const double bound = static_cast<double>(eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float b = baseline[i];
    const float eta = std::clamp(x[i] - b, -eps, eps);
    float v = std::clamp(b + eta, lo, hi);
    while (std::abs(static_cast<double>(v) - static_cast<double>(b)) > bound) v = std::nextafter(v, b);
    out[i] = v;
  }
  return out;
}

Tensor eot_gradient(const Classifier& model, const Tensor& x, int label, std::size_t num_eot, int max_shift, Rng& rng,
                    float* loss_out) {
  if (num_eot < 1) throw std::invalid_argument("eot_gradient: num_eot must be >= 1");
  Tensor acc(x.shape());
  Tensor g;
  float loss_sum = 0.0f;
  for (std::size_t k = 0; k < num_eot; ++k) {
    const EotTransform t = sample_eot(rng, max_shift);
    loss_sum += model.loss_and_gradient(apply_eot(t, x), label, g);
    const Tensor back = apply_eot_adjoint(t, g);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += back[i];
  }
  const float inv = 1.0f / static_cast<float>(num_eot);
  for (float& v : acc.raw()) v *= inv;
  if (loss_out) *loss_out = loss_sum * inv;
  return acc;
}

namespace {

void check_budget(const Tensor& x, const Tensor& baseline, const AttackConfig& cfg, std::size_t step) {
  const double bound = static_cast<double>(cfg.epsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(static_cast<double>(x[i]) - static_cast<double>(baseline[i]));
    if (d > bound || x[i] < cfg.clamp_lo || x[i] > cfg.clamp_hi) {
      throw std::logic_error("pgd: iterate left the feasible set at step " + std::to_string(step) + ", coordinate " +
                             std::to_string(i));
    }
  }
}

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

}  // namespace

SampleAttack pgd_attack_sample(const Classifier& model, const Tensor& start, int label, const Tensor& baseline,
                               const AttackConfig& cfg, std::uint64_t rng_seed, std::optional<int> target) {
  cfg.validate();
  if (label < 0 || label >= model.num_classes()) {
    throw std::invalid_argument("pgd: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(model.num_classes()) + ")");
  }
  if (target && (*target < 0 || *target >= model.num_classes())) throw std::invalid_argument("pgd: target out of range");
  if (start.shape() != baseline.shape()) throw std::invalid_argument("pgd: start and baseline shapes differ");
  for (std::size_t i = 0; i < start.size(); ++i) {
    if (baseline[i] < cfg.clamp_lo || baseline[i] > cfg.clamp_hi || start[i] < cfg.clamp_lo || start[i] > cfg.clamp_hi) {
      throw std::invalid_argument("pgd: input outside the clamp range");
    }
  }
  if (linf_distance(start, baseline) > static_cast<double>(cfg.epsilon)) {
    throw std::invalid_argument("pgd: start lies outside the epsilon ball around the baseline");
  }

  Rng rng(rng_seed);
  Tensor x = start;
  if (cfg.random_start) {
    std::uniform_real_distribution<float> u(-cfg.epsilon, cfg.epsilon);
    for (float& v : x.raw()) v += u(rng);
    x = project_linf(x, baseline, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  }
  check_budget(x, baseline, cfg, 0);

  const int loss_label = target ? *target : label;
  // Untargeted: ascend the loss of the true label. Targeted: descend the loss of the target.
  const float direction = target ? -1.0f : 1.0f;

  SampleAttack out;
  out.loss_trace.reserve(cfg.num_steps);
  for (std::size_t step = 1; step <= cfg.num_steps; ++step) {
    float loss = 0.0f;
    const Tensor g = eot_gradient(model, x, loss_label, cfg.num_eot, cfg.eot_max_shift, rng, &loss);
    if (!g.all_finite()) throw std::runtime_error("pgd: non-finite gradient at step " + std::to_string(step));
    out.loss_trace.push_back(loss);
    Tensor stepped = x;
    for (std::size_t i = 0; i < x.size(); ++i) stepped[i] = x[i] + direction * cfg.step_size * sign_of(g[i]);
    x = project_linf(stepped, baseline, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    check_budget(x, baseline, cfg, step);
  }
  out.prediction = model.predict_label(x);
  out.success = target ? out.prediction == *target : out.prediction != label;
  out.adversarial = std::move(x);
  return out;
}

AttackResult pgd_attack(const Classifier& model, std::span<const Tensor> x, std::span<const int> labels,
                        const AttackConfig& cfg, std::span<const Tensor> baseline, std::size_t jobs) {
  cfg.validate();
  if (x.size() != labels.size() || x.size() != baseline.size()) throw std::invalid_argument("pgd: batch length mismatch");
  if (cfg.targeted && cfg.targets.size() != x.size()) throw std::invalid_argument("pgd: targeted attack needs one target per sample");
  for (int y : labels) {
    if (y < 0 || y >= model.num_classes()) throw std::invalid_argument("pgd: label " + std::to_string(y) + " out of range");
  }
  const std::size_t n = x.size();
  std::vector<SampleAttack> results(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::optional<int> target = cfg.targeted ? std::optional<int>(cfg.targets[i]) : std::nullopt;
    results[i] = pgd_attack_sample(model, x[i], labels[i], baseline[i], cfg, stream_seed(cfg.seed, {i}), target);
  });
  AttackResult out;
  out.loss_trace.assign(cfg.num_steps, 0.0f);
  for (auto& r : results) {
    for (std::size_t s = 0; s < r.loss_trace.size(); ++s) out.loss_trace[s] += r.loss_trace[s] / static_cast<float>(n);
    out.success.push_back(r.success ? 1 : 0);
    out.predictions.push_back(r.prediction);
    out.adversarial.push_back(std::move(r.adversarial));
  }
  return out;
}

}  // namespace advbench
