#include "advbench/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace advbench {

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("write_png: expected (1|3, H, W) image, got " + shape_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> pixels(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image.at(ch, y, x), 0.0f, 1.0f);
        pixels[(y * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0f));
      }

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor difference_image(const Tensor& original, const Tensor& adversarial, double amplification) {
  if (!(amplification > 0.0) || !std::isfinite(amplification)) {
    throw std::invalid_argument("difference_image: amplification must be positive");
  }
  if (original.shape() != adversarial.shape()) throw std::invalid_argument("difference_image: shape mismatch");
  Tensor out(original.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(adversarial[i]) - static_cast<double>(original[i]);
    out[i] = static_cast<float>(std::clamp(0.5 + amplification * d, 0.0, 1.0));
  }
  return out;
}

}  // namespace advbench
