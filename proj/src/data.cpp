#include "advbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace advbench {

void Dataset::validate() const {
  if (images.size() != labels.size()) throw std::invalid_argument("dataset: images/labels length mismatch");
  if (!coarse_labels.empty() && coarse_labels.size() != labels.size()) {
    throw std::invalid_argument("dataset: coarse label length mismatch");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("dataset: sample " + std::to_string(i) + " label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (images[i].shape() != images[0].shape()) throw std::invalid_argument("dataset: inconsistent image shapes");
    for (float v : images[i].raw()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw std::invalid_argument("dataset: sample " + std::to_string(i) + " has a pixel outside [0,1]");
      }
    }
  }
}

Dataset Dataset::range(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  Dataset out;
  out.num_classes = num_classes;
  out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(begin), images.begin() + static_cast<std::ptrdiff_t>(end));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  if (!coarse_labels.empty()) {
    out.coarse_labels.assign(coarse_labels.begin() + static_cast<std::ptrdiff_t>(begin),
                             coarse_labels.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const { return range(0, n); }

Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t side, std::uint64_t seed,
                    const SynthOptions& opts) {
  if (num_classes < 1 || side == 0 || opts.channels == 0) throw std::invalid_argument("synth_blobs: sizes must be positive");
  Dataset data;
  data.num_classes = num_classes;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s = static_cast<double>(side);
  const double radius = 0.27 * s;
  const double sigma = opts.sigma * s;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c) {
      // Class position on a ring, class color from evenly spaced hues.
      const double angle = 2.0 * std::numbers::pi * c / num_classes;
      const double cx = 0.5 * (s - 1) + radius * std::cos(angle) + opts.jitter * s * gauss(rng);
      const double cy = 0.5 * (s - 1) + radius * std::sin(angle) + opts.jitter * s * gauss(rng);
      Tensor img({opts.channels, side, side});
      for (std::size_t ch = 0; ch < opts.channels; ++ch) {
        const double hue = angle + 2.0 * std::numbers::pi * static_cast<double>(ch) / static_cast<double>(opts.channels);
        const double color = std::cos(hue);
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t x = 0; x < side; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            double v = opts.background + opts.amplitude * color * blob;
            if (opts.noise > 0.0) v += opts.noise * gauss(rng);
            img.at(ch, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      data.images.push_back(std::move(img));
      data.labels.push_back(c);
    }
  }
  return data;
}

std::size_t cifar_label_bytes(CifarVariant variant) noexcept { return variant == CifarVariant::Cifar10 ? 1 : 2; }

int cifar_num_classes(CifarVariant variant) noexcept { return variant == CifarVariant::Cifar10 ? 10 : 100; }

Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant, const ImageGeometry& geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cifar: cannot open " + path.string());
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
  const std::size_t label_bytes = cifar_label_bytes(variant);
  const std::size_t record = label_bytes + geometry.pixels();
  if (bytes.size() % record != 0) {
    const std::size_t whole = bytes.size() / record;
    throw std::runtime_error("load_cifar: " + path.string() + " has " + std::to_string(bytes.size()) +
                             " bytes, expected a multiple of the " + std::to_string(record) +
                             "-byte record size; truncated record at byte offset " + std::to_string(whole * record) +
                             " (expected " + std::to_string((whole + 1) * record) + " bytes)");
  }
  Dataset data;
  data.num_classes = cifar_num_classes(variant);
  const std::size_t n = bytes.size() / record;
  data.images.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t offset = r * record;
    const std::size_t label_offset = offset + label_bytes - 1;
    const int label = bytes[label_offset];
    if (label >= data.num_classes) {
      throw std::runtime_error("load_cifar: label " + std::to_string(label) + " out of range at byte offset " +
                               std::to_string(label_offset));
    }
    if (variant == CifarVariant::Cifar100) {
      if (bytes[offset] >= 20) {
        throw std::runtime_error("load_cifar: coarse label " + std::to_string(bytes[offset]) +
                                 " out of range at byte offset " + std::to_string(offset));
      }
      data.coarse_labels.push_back(bytes[offset]);
    }
    Tensor img({geometry.channels, geometry.height, geometry.width});
    const unsigned char* px = bytes.data() + offset + label_bytes;
    for (std::size_t i = 0; i < geometry.pixels(); ++i) img[i] = static_cast<float>(px[i]) / 255.0f;
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
  }
  return data;
}

void save_cifar(const std::filesystem::path& path, const Dataset& data, CifarVariant variant) {
  data.validate();
  std::vector<unsigned char> bytes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] > 255) throw std::invalid_argument("save_cifar: label does not fit a byte");
    if (variant == CifarVariant::Cifar100) {
      bytes.push_back(data.coarse_labels.empty() ? 0 : static_cast<unsigned char>(data.coarse_labels[i]));
    }
    bytes.push_back(static_cast<unsigned char>(data.labels[i]));
    for (float v : data.images[i].raw()) bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_cifar: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("save_cifar: write failed for " + path.string());
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.raw()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

}  // namespace advbench
