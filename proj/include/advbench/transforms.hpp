#pragma once

#include <cstddef>
#include <vector>

#include "advbench/rng.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

/// Multi-resolution input stack. Each scale is an average pool down to the
/// target side followed by nearest upsampling back to the native side.
class PyramidSpec {
 public:
  PyramidSpec(std::size_t native_side, std::vector<std::size_t> resolutions);

  std::size_t native_side() const noexcept { return native_side_; }
  const std::vector<std::size_t>& resolutions() const noexcept { return resolutions_; }
  std::size_t scales() const noexcept { return resolutions_.size(); }
  std::size_t factor(std::size_t k) const { return native_side_ / resolutions_.at(k); }

 private:
  std::size_t native_side_;
  std::vector<std::size_t> resolutions_;
};

/// (C, S, S) -> (K*C, S, S), scale-major.
template <typename T>
BasicTensor<T> build_pyramid(const BasicTensor<T>& image, const PyramidSpec& spec);

/// Transpose of build_pyramid: maps a (K*C, S, S) cotangent back to (C, S, S).
template <typename T>
BasicTensor<T> pyramid_adjoint(const BasicTensor<T>& grad, const PyramidSpec& spec);

/// Integer pixel shift with zero fill: out(y, x) = in(y - dy, x - dx).
struct EotTransform {
  int dx = 0;
  int dy = 0;

  EotTransform inverse() const noexcept { return {-dx, -dy}; }
  friend bool operator==(const EotTransform&, const EotTransform&) = default;
};

/// Uniform over the (2s+1)^2 shift grid.
EotTransform sample_eot(Rng& rng, int max_shift);

template <typename T>
BasicTensor<T> apply_eot(const EotTransform& t, const BasicTensor<T>& image);

/// Transpose of apply_eot, which is the inverse shift with zero fill.
template <typename T>
BasicTensor<T> apply_eot_adjoint(const EotTransform& t, const BasicTensor<T>& grad) {
  return apply_eot(t.inverse(), grad);
}

}  // namespace advbench
