#pragma once

#include <filesystem>
#include <vector>

namespace plkrf {

// RGB image, row-major, channels interleaved, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  static Image filled(int width, int height, double r, double g, double b);

  double* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const double* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// 8-bit RGB PNG i/o. Values are clamped to [0,1] and quantized on write.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace plkrf
