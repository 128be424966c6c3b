#include <doctest.h>

#include <cmath>
#include <random>

#include "advbench/graph.hpp"

using namespace advbench;

namespace {

// Plain dense forward used as an oracle: y = W x + b.
std::vector<double> dense(const std::vector<double>& w, const std::vector<double>& b, const std::vector<double>& x) {
  std::vector<double> y(b);
  for (std::size_t o = 0; o < b.size(); ++o)
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += w[o * x.size() + i] * x[i];
  return y;
}

std::vector<double> relu(std::vector<double> v) {
  for (auto& x : v) x = std::max(0.0, x);
  return v;
}

}  // namespace

TEST_CASE("input-only graph is the identity") {
  Graph g({2, 3, 3});
  g.mark_output(g.input());
  Tensor x({2, 3, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) * 0.25f - 1.0f;
  const auto eval = forward<float>(g, {}, x);
  CHECK(eval.value(g.outputs()[0]) == x);
}

TEST_CASE("affine with zero weights returns the bias") {
  Graph g({4});
  const NodeId y = g.affine(g.input(), 3, "fc");
  ParameterSet p;
  p.emplace("fc.weight", Tensor({3, 4}));
  p.emplace("fc.bias", Tensor({3}, std::vector<float>{1.5f, -2.0f, 0.25f}));
  const auto eval = forward<float>(g, p, Tensor({4}, std::vector<float>{9, -3, 7, 1}));
  CHECK(eval.value(y) == p.at("fc.bias"));
}

TEST_CASE("three-layer relu network matches a hand evaluation") {
  Graph g({3});
  NodeId h = g.relu(g.affine(g.input(), 4, "l1"));
  h = g.relu(g.affine(h, 3, "l2"));
  const NodeId y = g.affine(h, 2, "l3");
  std::mt19937_64 rng(7);
  const auto params = g.init_parameters<double>(rng);
  auto w = [&](const char* n) {
    const auto& t = params.at(n);
    return std::vector<double>(t.values().begin(), t.values().end());
  };
  const std::vector<double> x{0.3, -0.7, 1.1};
  auto expect = dense(w("l1.weight"), w("l1.bias"), x);
  expect = dense(w("l2.weight"), w("l2.bias"), relu(expect));
  expect = dense(w("l3.weight"), w("l3.bias"), relu(expect));
  const auto eval = forward<double>(g, params, BasicTensor<double>({3}, x));
  for (std::size_t i = 0; i < 2; ++i) CHECK(eval.value(y)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("sum of squares gradient") {
  Graph g({2});
  const NodeId s = g.sum_squares(g.input());
  const auto eval = forward<double>(g, {}, BasicTensor<double>({2}, std::vector<double>{1.0, 2.0}));
  CHECK(eval.value(s)[0] == 5.0);
  const auto grad = backward<double>(g, {}, eval, s);
  CHECK(grad.input[0] == 2.0);
  CHECK(grad.input[1] == 4.0);
}

TEST_CASE("cross-entropy on uniform logits") {
  const std::vector<double> logits(4, 0.7);
  std::vector<double> grad(4);
  const double loss = softmax_cross_entropy<double>(logits, 2, grad);
  CHECK(loss == doctest::Approx(std::log(4.0)));
  CHECK(grad[0] == doctest::Approx(0.25));
  CHECK(grad[2] == doctest::Approx(-0.75));
}

TEST_CASE("cross-entropy keeps a gradient on near-certain predictions") {
  const std::vector<float> logits{60.0f, 0.0f};
  std::vector<float> grad(2);
  softmax_cross_entropy<float>(logits, 0, grad);
  CHECK(grad[0] < 0.0f);
  CHECK(grad[0] == -grad[1]);
}

TEST_CASE("non-scalar loss node is rejected") {
  Graph g({3});
  const NodeId y = g.affine(g.input(), 2, "fc");
  std::mt19937_64 rng(1);
  const auto p = g.init_parameters<double>(rng);
  const auto eval = forward<double>(g, p, BasicTensor<double>({3}, 0.5));
  CHECK_THROWS_AS(backward<double>(g, p, eval, y), std::invalid_argument);
}

TEST_CASE("shape mismatch names the op") {
  Graph g({3});
  g.mark_output(g.affine(g.input(), 2, "fc"));
  std::mt19937_64 rng(1);
  const auto p = g.init_parameters<float>(rng);
  try {
    forward<float>(g, p, Tensor({4}));
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("input") != std::string::npos);
  }
}

TEST_CASE("finite differences agree with backward on random two-layer nets") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Graph g({2, 4, 4});
    NodeId h = g.relu(g.conv3x3(g.input(), 3, "c1"));
    h = g.avg_pool(h, 2);
    const NodeId loss = g.softmax_cross_entropy(g.affine(h, 5, "fc"));
    std::mt19937_64 rng(seed);
    const auto p = g.init_parameters<double>(rng);
    BasicTensor<double> x({2, 4, 4});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.values()) v = u(rng);
    const auto report = gradient_check(g, p, x, loss, static_cast<int>(seed % 5), 1e-6);
    CHECK(report.checked > 0);
    CHECK(report.max_relative_error < 1e-5);
  }
}

TEST_CASE("gradient check of a linear model is essentially exact") {
  Graph g({6});
  const NodeId loss = g.sum_squares(g.affine(g.input(), 3, "fc"));
  std::mt19937_64 rng(3);
  const auto p = g.init_parameters<double>(rng);
  BasicTensor<double> x({6});
  for (std::size_t i = 0; i < 6; ++i) x[i] = 0.1 * static_cast<double>(i) - 0.2;
  const auto report = gradient_check(g, p, x, loss, std::nullopt, 1e-4);
  CHECK(report.checked == 6);
  CHECK(report.skipped_at_kinks == 0);
  CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("finite difference check rejects non-positive step") {
  FiniteDifferenceProblem prob{[](const BasicTensor<double>& x) { return x[0]; }, {}};
  BasicTensor<double> x({1}), a({1}, 1.0);
  CHECK_THROWS_AS(finite_difference_check(prob, x, a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(finite_difference_check(prob, x, a, -1e-3), std::invalid_argument);
}

TEST_CASE("forward is pure and backward is linear in the seed") {
  Graph g({3, 4, 4});
  NodeId h = g.relu(g.conv3x3(g.input(), 2, "c"));
  const NodeId y = g.affine(h, 3, "fc");
  std::mt19937_64 rng(11);
  const auto p = g.init_parameters<float>(rng);
  Tensor x({3, 4, 4});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : x.values()) v = u(rng);
  const auto e1 = forward<float>(g, p, x);
  const auto e2 = forward<float>(g, p, x);
  CHECK(e1.value(y) == e2.value(y));

  const auto e = forward<double>(g, cast_parameters<double>(p), x.cast<double>());
  const auto pd = cast_parameters<double>(p);
  BasicTensor<double> s1({3}, std::vector<double>{1.0, -2.0, 0.5});
  BasicTensor<double> s2({3}, std::vector<double>{0.25, 0.0, 3.0});
  BasicTensor<double> s12({3});
  for (std::size_t i = 0; i < 3; ++i) s12[i] = 2.0 * s1[i] + s2[i];
  auto vjp = [&](const BasicTensor<double>& s) {
    const std::vector<Seed<double>> seeds{{y, s}};
    return backward_seeded<double>(g, pd, e, seeds).input;
  };
  const auto g1 = vjp(s1), g2 = vjp(s2), g12 = vjp(s12);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g12[i] == doctest::Approx(2.0 * g1[i] + g2[i]).epsilon(1e-12));
}
