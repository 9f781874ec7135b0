#include "physadv/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace physadv {

Image::Image(numkit::Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.ndim() != 3 || pixels_.shape()[2] != kChannels) {
    throw std::invalid_argument("image: expected (height, width, 3), got " +
                                numkit::shape_string(pixels_.shape()));
  }
}

void save_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(255.0 * v));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P6" || maxval != 255 || !in) {
    throw std::runtime_error("unsupported PPM: " + path.string());
  }
  in.get();
  std::vector<unsigned char> bytes(width * height * Image::kChannels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("truncated PPM: " + path.string());
  Image image(width, height);
  for (std::size_t i = 0; i < bytes.size(); ++i) image[i] = bytes[i] / 255.0;
  return image;
}

Image visualize_perturbation(const Image& delta) {
  Image out(delta.width(), delta.height());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    out[i] = std::clamp((128.0 + 5.0 * 255.0 * delta[i]) / 255.0, 0.0, 1.0);
  }
  return out;
}

}  // namespace physadv
