#include "physadv/numkit.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace physadv::numkit {

Tensor adam_step(AdamState& state, const Tensor& grad, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be > 0");
  require_same_shape(state.m, grad, "adam_step");
  require_same_shape(state.v, grad, "adam_step");
  if (!grad.all_finite()) throw std::invalid_argument("adam_step: non-finite gradient");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);

  Tensor update = Tensor::zeros_like(grad);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bias1;
    const double v_hat = state.v[i] / bias2;
    update[i] = -lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  return update;
}

Tensor sgd_momentum_step(Tensor& velocity, const Tensor& grad,
                         const Tensor& param, double lr, double momentum,
                         double weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_momentum_step: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("sgd_momentum_step: momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("sgd_momentum_step: weight decay must be >= 0");
  require_same_shape(velocity, grad, "sgd_momentum_step");
  require_same_shape(param, grad, "sgd_momentum_step");

  Tensor update = Tensor::zeros_like(grad);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    update[i] = -lr * velocity[i];
  }
  return update;
}

namespace {

double root_mean_site_norm(std::span<const double> values, std::size_t sites,
                           std::size_t channels) {
  double acc = 0.0;
  for (std::size_t s = 0; s < sites; ++s) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = values[s * channels + c];
      acc += v * v;
    }
  }
  return std::sqrt(acc / static_cast<double>(sites));
}

}  // namespace

Perceptibility perceptibility_image(const Tensor& delta_image) {
  if (delta_image.ndim() != 3 || delta_image.shape()[2] != Image::kChannels) {
    throw std::invalid_argument("perceptibility_image: expected (height, width, 3), got " +
                                shape_string(delta_image.shape()));
  }
  const std::size_t sites = delta_image.shape()[0] * delta_image.shape()[1];
  if (sites == 0) throw std::invalid_argument("perceptibility_image: empty image");
  return {root_mean_site_norm(delta_image.data(), sites, Image::kChannels)};
}

Perceptibility perceptibility_image(const Image& delta_image) {
  return perceptibility_image(delta_image.tensor());
}

Perceptibility perceptibility_params(const Tensor& delta_params,
                                     std::size_t width, std::size_t height,
                                     std::size_t channels_per_site) {
  const std::size_t sites = width * height;
  if (sites == 0 || channels_per_site == 0 ||
      delta_params.size() != sites * channels_per_site) {
    throw std::invalid_argument(
        "perceptibility_params: " + std::to_string(delta_params.size()) +
        " values do not factor as " + std::to_string(width) + "x" +
        std::to_string(height) + "x" + std::to_string(channels_per_site));
  }
  return {root_mean_site_norm(delta_params.data(), sites, channels_per_site)};
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return __builtin_bswap64(v);
  }
  return v;
}

}  // namespace

void write_patd(std::ostream& out, const Tensor& t) {
  std::ostringstream header;
  header << "PATD " << t.ndim();
  for (std::size_t d : t.shape()) header << ' ' << d;
  header << '\n';
  out << header.str();
  for (double v : t.data()) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
  if (!out) throw std::runtime_error("write_patd: stream error");
}

Tensor read_patd(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_patd: missing header");
  std::istringstream header(line);
  std::string magic;
  std::size_t ndim = 0;
  header >> magic >> ndim;
  if (magic != "PATD" || !header) throw std::runtime_error("read_patd: bad header '" + line + "'");
  Shape shape(ndim);
  for (auto& d : shape) {
    if (!(header >> d)) throw std::runtime_error("read_patd: truncated shape in header");
  }
  std::vector<double> data(shape_size(shape));
  for (double& v : data) {
    char buf[8];
    if (!in.read(buf, 8)) throw std::runtime_error("read_patd: truncated payload");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    v = std::bit_cast<double>(to_little_endian(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_patd(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_patd(out, t);
}

Tensor load_patd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_patd(in);
}

}  // namespace physadv::numkit
