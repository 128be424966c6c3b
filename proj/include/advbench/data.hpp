#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "advbench/tensor.hpp"

namespace advbench {

struct Dataset {
  std::vector<Tensor> images;  // each (C, H, W), values in [0, 1]
  std::vector<int> labels;     // in [0, num_classes)
  std::vector<int> coarse_labels;  // CIFAR-100 only, otherwise empty
  int num_classes = 0;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  /// Throws if lengths differ, a label is out of range, or a pixel leaves [0, 1].
  void validate() const;

  /// First `n` samples (or all, if fewer).
  Dataset head(std::size_t n) const;
  /// Samples [begin, end).
  Dataset range(std::size_t begin, std::size_t end) const;
};

struct SynthOptions {
  std::size_t channels = 3;
  double background = 0.5;
  double amplitude = 0.3;   // peak blob contrast against the background
  double sigma = 0.18;      // blob radius, fraction of the side
  double jitter = 0.06;     // center jitter, fraction of the side
  double noise = 0.08;      // per-pixel Gaussian noise std
};

/// One Gaussian blob per class at a class-specific position and color.
/// Samples are interleaved by class (0, 1, ..., K-1, 0, 1, ...).
Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t side, std::uint64_t seed,
                    const SynthOptions& opts = {});

enum class CifarVariant { Cifar10, Cifar100 };

struct ImageGeometry {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t pixels() const noexcept { return channels * height * width; }
};

std::size_t cifar_label_bytes(CifarVariant variant) noexcept;
int cifar_num_classes(CifarVariant variant) noexcept;

/// Parses the CIFAR binary layout: per record 1 label byte (CIFAR-10) or
/// coarse + fine label bytes (CIFAR-100), then the channel planes row-major.
/// Pixels are mapped to [0, 1] by /255. Non-default geometries use the same
/// record layout for smaller desk-scale sets.
Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant, const ImageGeometry& geometry = {});

/// Writes `data` in the same layout, quantizing each pixel to round(255 v).
void save_cifar(const std::filesystem::path& path, const Dataset& data, CifarVariant variant);

/// round(255 v) / 255 on every pixel.
Tensor quantize_8bit(const Tensor& image);

}  // namespace advbench
