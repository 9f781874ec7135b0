#pragma once

#include <cstddef>
#include <filesystem>
#include <span>

#include "physadv/tensor.hpp"

namespace physadv {

// Height x width x RGB raster, row-major with channels innermost.
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : pixels_({height, width, kChannels}, fill) {}
  explicit Image(numkit::Tensor pixels);

  std::size_t width() const { return pixels_.ndim() == 3 ? pixels_.shape()[1] : 0; }
  std::size_t height() const { return pixels_.ndim() == 3 ? pixels_.shape()[0] : 0; }
  std::size_t size() const { return pixels_.size(); }
  std::size_t pixel_count() const { return width() * height(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t c) const {
    return (y * width() + x) * kChannels + c;
  }
  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels_[index(x, y, c)]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return pixels_[index(x, y, c)]; }

  double& operator[](std::size_t i) { return pixels_[i]; }
  double operator[](std::size_t i) const { return pixels_[i]; }

  std::span<double> data() { return pixels_.data(); }
  std::span<const double> data() const { return pixels_.data(); }

  const numkit::Tensor& tensor() const { return pixels_; }
  bool same_shape(const Image& other) const { return pixels_.same_shape(other.pixels_); }

  friend Image operator-(const Image& a, const Image& b) {
    return Image(a.pixels_ - b.pixels_);
  }
  friend bool operator==(const Image&, const Image&) = default;

 private:
  numkit::Tensor pixels_;
};

// 8-bit binary PPM (P6), value round(255 * clamp01(v)), no gamma.
void save_ppm(const std::filesystem::path& path, const Image& image);
Image load_ppm(const std::filesystem::path& path);

// Perturbation visualization: 128 + 5 * 255 * delta, clamped to [0, 255].
Image visualize_perturbation(const Image& delta);

}  // namespace physadv
