#include <doctest.h>

#include <cmath>
#include <map>

#include "advbench/transforms.hpp"

using namespace advbench;

namespace {

Tensor ramp(std::size_t c, std::size_t s, float scale = 0.01f) {
  Tensor t({c, s, s});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 97) * scale;
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("pyramid resolution validation") {
  CHECK_NOTHROW(PyramidSpec(32, {32, 16, 8}));
  CHECK_THROWS(PyramidSpec(32, {32, 12}));
  CHECK_THROWS(PyramidSpec(32, {16, 32}));
  CHECK_THROWS(PyramidSpec(32, {}));
}

TEST_CASE("pyramid of a constant image is constant at every scale") {
  const Tensor img({3, 8, 8}, 0.375f);
  const auto p = build_pyramid(img, PyramidSpec(8, {8, 4, 2, 1}));
  CHECK(p.shape() == Shape{12, 8, 8});
  for (float v : p.values()) CHECK(v == 0.375f);
}

TEST_CASE("checkerboard downsamples to a flat half plane") {
  Tensor img({1, 8, 8});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at(0, y, x) = static_cast<float>((x + y) % 2);
  const auto p = build_pyramid(img, PyramidSpec(8, {8, 4}));
  for (std::size_t i = 0; i < 64; ++i) CHECK(p[i] == img[i]);
  for (std::size_t i = 64; i < 128; ++i) CHECK(p[i] == 0.5f);
}

TEST_CASE("pyramid is linear and its adjoint is the transpose") {
  const PyramidSpec spec(8, {8, 4, 2});
  const auto a = ramp(2, 8), b = ramp(2, 8, 0.003f);
  Tensor sum(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + 2.0f * b[i];
  const auto pa = build_pyramid(a, spec), pb = build_pyramid(b, spec), ps = build_pyramid(sum, spec);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i] == doctest::Approx(pa[i] + 2.0f * pb[i]).epsilon(1e-6));

  const auto g = ramp(6, 8, 0.007f);
  CHECK(dot(build_pyramid(a, spec), g) == doctest::Approx(dot(a, pyramid_adjoint(g, spec))).epsilon(1e-6));
}

TEST_CASE("block averaging stays within the input range") {
  const auto img = ramp(3, 16);
  const auto p = build_pyramid(img, PyramidSpec(16, {8, 4, 2}));
  const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
  for (float v : p.values()) {
    CHECK(v >= *lo);
    CHECK(v <= *hi);
  }
}

TEST_CASE("zero-range eot is the identity") {
  Rng rng(5);
  const auto img = ramp(3, 6);
  for (int i = 0; i < 20; ++i) {
    const auto t = sample_eot(rng, 0);
    CHECK(t == EotTransform{0, 0});
    CHECK(apply_eot(t, img) == img);
  }
  CHECK_THROWS(sample_eot(rng, -1));
}

TEST_CASE("single pixel moves by the shift") {
  Tensor img({1, 5, 5});
  img.at(0, 2, 2) = 1.0f;
  const auto out = apply_eot(EotTransform{1, -2}, img);
  CHECK(out.at(0, 0, 3) == 1.0f);
  double total = 0.0;
  for (float v : out.values()) total += v;
  CHECK(total == 1.0);
}

TEST_CASE("inverse shift restores the interior") {
  const auto img = ramp(2, 8);
  const EotTransform t{2, 1};
  const auto back = apply_eot(t.inverse(), apply_eot(t, img));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y + 1 < 8; ++y)
      for (std::size_t x = 0; x + 2 < 8; ++x) CHECK(back.at(c, y, x) == img.at(c, y, x));
  // eot adjoint: <T a, g> == <a, T* g>
  const auto g = ramp(2, 8, 0.005f);
  CHECK(dot(apply_eot(t, img), g) == doctest::Approx(dot(img, apply_eot_adjoint(t, g))).epsilon(1e-6));
}

TEST_CASE("eot shifts are uniform over the grid") {
  Rng rng(123);
  const int s = 2;
  const int n = 10000;
  std::map<std::pair<int, int>, int> counts;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_eot(rng, s);
    REQUIRE(std::abs(t.dx) <= s);
    REQUIRE(std::abs(t.dy) <= s);
    ++counts[{t.dx, t.dy}];
  }
  CHECK(counts.size() == 25);
  const double p = 1.0 / 25.0;
  const double mean = n * p, sd = std::sqrt(n * p * (1.0 - p));
  for (const auto& [k, c] : counts) CHECK(std::abs(c - mean) <= 3.0 * sd);
}
