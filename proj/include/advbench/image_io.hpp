#pragma once

#include <filesystem>

#include "advbench/tensor.hpp"

namespace advbench {

/// 8-bit PNG of a (1, H, W) or (3, H, W) image; values are clamped to [0, 1]
/// and rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// 0.5 + amplification * (adversarial - original), clamped to [0, 1]: a zero
/// perturbation is uniform mid-gray. Rejects amplification <= 0.
Tensor difference_image(const Tensor& original, const Tensor& adversarial, double amplification);

}  // namespace advbench
