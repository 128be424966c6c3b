#include "advbench/transforms.hpp"

#include <stdexcept>
#include <string>

namespace advbench {

PyramidSpec::PyramidSpec(std::size_t native_side, std::vector<std::size_t> resolutions)
    : native_side_(native_side), resolutions_(std::move(resolutions)) {
  if (native_side_ == 0 || resolutions_.empty()) throw std::invalid_argument("pyramid: empty resolution list");
  for (std::size_t k = 0; k < resolutions_.size(); ++k) {
    const std::size_t r = resolutions_[k];
    if (r == 0 || r > native_side_ || native_side_ % r != 0) {
      throw std::invalid_argument("pyramid: resolution " + std::to_string(r) + " does not divide native side " +
                                  std::to_string(native_side_));
    }
    if (k > 0 && r >= resolutions_[k - 1]) throw std::invalid_argument("pyramid: resolutions must strictly decrease");
  }
}

namespace {

void check_image(const Shape& shape, const PyramidSpec& spec, const char* op) {
  if (shape.size() != 3 || shape[1] != spec.native_side() || shape[2] != spec.native_side()) {
    throw std::invalid_argument(std::string(op) + ": expected (C," + std::to_string(spec.native_side()) + "," +
                                std::to_string(spec.native_side()) + ") image, got " + shape_string(shape));
  }
}

// Replaces every f x f block of plane `src` by its mean, written to `dst`.
template <typename T>
void block_mean(const T* src, T* dst, std::size_t side, std::size_t f) {
  const T scale = T{1} / static_cast<T>(f * f);
  for (std::size_t by = 0; by < side; by += f) {
    for (std::size_t bx = 0; bx < side; bx += f) {
      T acc = 0;
      for (std::size_t y = by; y < by + f; ++y)
        for (std::size_t x = bx; x < bx + f; ++x) acc += src[y * side + x];
      const T mean = acc * scale;
      for (std::size_t y = by; y < by + f; ++y)
        for (std::size_t x = bx; x < bx + f; ++x) dst[y * side + x] = mean;
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> build_pyramid(const BasicTensor<T>& image, const PyramidSpec& spec) {
  check_image(image.shape(), spec, "build_pyramid");
  const std::size_t c = image.dim(0), side = spec.native_side(), plane = side * side;
  BasicTensor<T> out({spec.scales() * c, side, side});
  for (std::size_t k = 0; k < spec.scales(); ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      block_mean(image.raw().data() + ch * plane, out.raw().data() + (k * c + ch) * plane, side, spec.factor(k));
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> pyramid_adjoint(const BasicTensor<T>& grad, const PyramidSpec& spec) {
  const std::size_t side = spec.native_side(), plane = side * side;
  if (grad.rank() != 3 || grad.dim(0) % spec.scales() != 0 || grad.dim(1) != side || grad.dim(2) != side) {
    throw std::invalid_argument("pyramid_adjoint: unexpected shape " + shape_string(grad.shape()));
  }
  const std::size_t c = grad.dim(0) / spec.scales();
  BasicTensor<T> out({c, side, side});
  std::vector<T> scratch(plane);
  // Block averaging followed by nearest upsampling is an orthogonal
  // projection, so each scale's transpose is the same block mean.
  for (std::size_t k = 0; k < spec.scales(); ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      block_mean(grad.raw().data() + (k * c + ch) * plane, scratch.data(), side, spec.factor(k));
      T* dst = out.raw().data() + ch * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += scratch[i];
    }
  }
  return out;
}

EotTransform sample_eot(Rng& rng, int max_shift) {
  if (max_shift < 0) throw std::invalid_argument("sample_eot: max shift must be >= 0");
  if (max_shift == 0) return {};
  const int width = 2 * max_shift + 1;
  std::uniform_int_distribution<int> pick(0, width * width - 1);
  const int idx = pick(rng);
  return {idx % width - max_shift, idx / width - max_shift};
}

template <typename T>
BasicTensor<T> apply_eot(const EotTransform& t, const BasicTensor<T>& image) {
  if (image.rank() != 3) throw std::invalid_argument("apply_eot: expected (C,H,W), got " + shape_string(image.shape()));
  if (t.dx == 0 && t.dy == 0) return image;
  const auto c = image.dim(0);
  const auto h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
  BasicTensor<T> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (long y = 0; y < h; ++y) {
      const long sy = y - t.dy;
      if (sy < 0 || sy >= h) continue;
      for (long x = 0; x < w; ++x) {
        const long sx = x - t.dx;
        if (sx < 0 || sx >= w) continue;
        out.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            image.at(ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

template BasicTensor<float> build_pyramid<float>(const BasicTensor<float>&, const PyramidSpec&);
template BasicTensor<double> build_pyramid<double>(const BasicTensor<double>&, const PyramidSpec&);
template BasicTensor<float> pyramid_adjoint<float>(const BasicTensor<float>&, const PyramidSpec&);
template BasicTensor<double> pyramid_adjoint<double>(const BasicTensor<double>&, const PyramidSpec&);
template BasicTensor<float> apply_eot<float>(const EotTransform&, const BasicTensor<float>&);
template BasicTensor<double> apply_eot<double>(const EotTransform&, const BasicTensor<double>&);

}  // namespace advbench
