#include <doctest.h>

#include <cmath>
#include <numeric>

#include "advbench/attack.hpp"

using namespace advbench;

namespace {

std::vector<float> random_weights(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> mag(0.1f, 1.0f);
  std::bernoulli_distribution neg(0.5);
  std::vector<float> w(n);
  for (auto& v : w) v = neg(rng) ? -mag(rng) : mag(rng);
  return w;
}

double margin(std::span<const float> w, float b, const Tensor& x) {
  double m = b;
  for (std::size_t i = 0; i < w.size(); ++i) m += static_cast<double>(w[i]) * x[i];
  return m;
}

AttackConfig quiet(float eps, std::size_t steps = 20) {
  AttackConfig c;
  c.epsilon = eps;
  c.step_size = eps > 0.0f ? eps / 4.0f : 1.0f / 1020.0f;
  c.num_steps = steps;
  c.num_eot = 1;
  c.eot_max_shift = 0;
  return c;
}

}  // namespace

TEST_CASE("projection respects the budget exactly") {
  Rng rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f), wide(-0.5f, 1.5f);
  for (float eps : {0.0f, 1.0f / 255.0f, 8.0f / 255.0f, 16.0f / 255.0f, 0.3f}) {
    Tensor b({500}), x({500});
    for (std::size_t i = 0; i < 500; ++i) {
      b[i] = u(rng);
      x[i] = wide(rng);
    }
    const auto p = project_linf(x, b, eps, 0.0f, 1.0f);
    for (std::size_t i = 0; i < 500; ++i) {
      CHECK(std::abs(static_cast<double>(p[i]) - b[i]) <= static_cast<double>(eps));
      CHECK(p[i] >= 0.0f);
      CHECK(p[i] <= 1.0f);
    }
  }
}

TEST_CASE("zero budget returns the input unchanged") {
  const auto w = random_weights(12, 1);
  const auto m = LinearClassifier::binary({3, 2, 2}, w, 0.5f);
  Tensor x({3, 2, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.05f * static_cast<float>(i);
  const auto r = pgd_attack_sample(m, x, 0, x, quiet(0.0f), 0);
  CHECK(r.adversarial == x);
}

TEST_CASE("linear model: pgd reaches the closed-form optimum") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = random_weights(48, 10 + seed);
    const float eps = 8.0f / 255.0f;
    const auto m = LinearClassifier::binary({3, 4, 4}, w, 1.0f);
    const Tensor x({3, 4, 4}, 0.5f);
    const auto r = pgd_attack_sample(m, x, 0, x, quiet(eps, 10), seed);
    double l1 = 0.0;
    for (float v : w) l1 += std::abs(static_cast<double>(v));
    const double expected = static_cast<double>(eps) * l1;
    const double drop = margin(w, 1.0f, x) - margin(w, 1.0f, r.adversarial);
    CHECK(std::abs(drop - expected) / expected < 1e-4);
  }
}

TEST_CASE("every pgd iterate stays feasible and loss rises on a linear model") {
  const auto w = random_weights(27, 4);
  const auto m = LinearClassifier::binary({3, 3, 3}, w, 3.0f);
  Rng rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor x({3, 3, 3});
  for (auto& v : x.values()) v = u(rng);
  for (float eps : {2.0f / 255.0f, 16.0f / 255.0f}) {
    auto cfg = quiet(eps, 30);
    cfg.random_start = true;
    // check_budget inside pgd throws on any infeasible iterate
    const auto r = pgd_attack_sample(m, x, 0, x, cfg, 3);
    CHECK(linf_distance(r.adversarial, x) <= static_cast<double>(eps));
    for (float v : r.adversarial.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  const auto r = pgd_attack_sample(m, x, 0, x, quiet(4.0f / 255.0f, 8), 0);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] >= r.loss_trace[i - 1]);
}

TEST_CASE("a step of at least twice epsilon saturates at the ball corner") {
  const auto w = random_weights(12, 6);
  const auto m = LinearClassifier::binary({3, 2, 2}, w, 0.0f);
  const Tensor x({3, 2, 2}, 0.5f);
  auto cfg = quiet(4.0f / 255.0f, 1);
  cfg.step_size = 2.0f * cfg.epsilon;
  const auto r = pgd_attack_sample(m, x, 0, x, cfg, 0);
  for (std::size_t i = 0; i < 12; ++i) {
    const float expect = w[i] > 0 ? 0.5f - cfg.epsilon : 0.5f + cfg.epsilon;
    CHECK(r.adversarial[i] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("pgd is deterministic and independent of the job count") {
  const auto w = random_weights(48, 12);
  const auto m = LinearClassifier::binary({3, 4, 4}, w, 0.2f);
  std::vector<Tensor> xs;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    xs.emplace_back(Shape{3, 4, 4}, 0.1f + 0.1f * static_cast<float>(i));
    labels.push_back(i % 2);
  }
  AttackConfig cfg;
  cfg.num_steps = 5;
  cfg.num_eot = 3;
  cfg.eot_max_shift = 1;
  cfg.random_start = true;
  const auto a = pgd_attack(m, xs, labels, cfg, xs, 1);
  const auto b = pgd_attack(m, xs, labels, cfg, xs, 4);
  const auto c = pgd_attack(m, xs, labels, cfg, xs, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(a.adversarial[i] == b.adversarial[i]);
    CHECK(a.adversarial[i] == c.adversarial[i]);
  }
  CHECK(a.loss_trace == b.loss_trace);
}

TEST_CASE("eot with zero shift range is the plain gradient") {
  const auto w = random_weights(12, 2);
  const auto m = LinearClassifier::binary({3, 2, 2}, w, 0.1f);
  const Tensor x({3, 2, 2}, 0.3f);
  Rng rng(0);
  const auto g = eot_gradient(m, x, 1, 7, 0, rng);
  Tensor direct;
  m.loss_and_gradient(x, 1, direct);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(direct[i]).epsilon(1e-6));
}

TEST_CASE("eot gradient of a linear model matches the shifted average") {
  const std::size_t side = 4, n = 3 * side * side;
  const auto w = random_weights(n, 21);
  const float b = -0.3f;
  const auto m = LinearClassifier::binary({3, side, side}, w, b);
  Tensor x({3, side, side});
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>((i * 7) % 11) / 10.0f;

  const std::size_t k = 10;
  Rng rng(77), oracle_rng(77);
  const auto g = eot_gradient(m, x, 0, k, 2, rng);

  // Oracle: for shift (dx, dy), d/dx of CE(label 0) is sum over pixels moved
  // into the frame of (p0 - 1) * w at the destination.
  std::vector<double> expect(n, 0.0);
  for (std::size_t s = 0; s < k; ++s) {
    const auto t = sample_eot(oracle_rng, 2);
    auto src = [&](std::size_t c, long y, long xx) -> long {
      const long sy = y - t.dy, sx = xx - t.dx;
      if (sy < 0 || sx < 0 || sy >= static_cast<long>(side) || sx >= static_cast<long>(side)) return -1;
      return static_cast<long>((c * side + sy) * side + sx);
    };
    double z = b;
    for (std::size_t c = 0; c < 3; ++c)
      for (long y = 0; y < static_cast<long>(side); ++y)
        for (long xx = 0; xx < static_cast<long>(side); ++xx) {
          const long j = src(c, y, xx);
          if (j >= 0) z += static_cast<double>(w[(c * side + y) * side + xx]) * x[j];
        }
    const double p0 = 1.0 / (1.0 + std::exp(-z));
    for (std::size_t c = 0; c < 3; ++c)
      for (long y = 0; y < static_cast<long>(side); ++y)
        for (long xx = 0; xx < static_cast<long>(side); ++xx) {
          const long j = src(c, y, xx);
          if (j >= 0) expect[j] += (p0 - 1.0) * w[(c * side + y) * side + xx] / static_cast<double>(k);
        }
  }
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(g[i] - expect[i]) < 1e-6);
}

TEST_CASE("attack input validation") {
  const auto w = random_weights(4, 1);
  const auto m = LinearClassifier::binary({1, 2, 2}, w, 0.0f);
  const Tensor x({1, 2, 2}, 0.5f);
  CHECK_THROWS_AS(pgd_attack_sample(m, x, 2, x, quiet(0.01f), 0), std::invalid_argument);
  CHECK_THROWS_AS(pgd_attack_sample(m, x, -1, x, quiet(0.01f), 0), std::invalid_argument);
  auto bad = quiet(0.01f);
  bad.step_size = 0.0f;
  CHECK_THROWS_AS(pgd_attack_sample(m, x, 0, x, bad, 0), std::invalid_argument);
  bad = quiet(0.01f);
  bad.num_eot = 0;
  CHECK_THROWS_AS(pgd_attack_sample(m, x, 0, x, bad, 0), std::invalid_argument);
  Tensor far({1, 2, 2}, 0.6f);
  CHECK_THROWS_AS(pgd_attack_sample(m, far, 0, x, quiet(0.01f), 0), std::invalid_argument);
}

TEST_CASE("targeted attack moves toward the target") {
  const std::size_t n = 16;
  Tensor wt({3, n}), bias({3});
  Rng rng(3);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (auto& v : wt.values()) v = nd(rng);
  const LinearClassifier m({1, 4, 4}, wt, bias);
  const Tensor x({1, 4, 4}, 0.5f);
  auto cfg = quiet(0.2f, 40);
  const int label = m.predict_label(x);
  const int target = (label + 1) % 3;
  const auto r = pgd_attack_sample(m, x, label, x, cfg, 0, target);
  CHECK(r.loss_trace.back() <= r.loss_trace.front());
}
