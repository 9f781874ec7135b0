#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>

#include "physadv/image.hpp"
#include "physadv/tensor.hpp"

namespace physadv::numkit {

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_shape(const Shape& shape) {
    return AdamState{Tensor(shape), Tensor(shape)};
  }
};

// Bias-corrected Adam. Mutates the state and returns the additive update
// -lr * m_hat / (sqrt(v_hat) + eps).
Tensor adam_step(AdamState& state, const Tensor& grad, double lr);

// Heavy-ball SGD with L2 weight decay:
//   velocity <- momentum * velocity + grad + weight_decay * param
//   update    = -lr * velocity
Tensor sgd_momentum_step(Tensor& velocity, const Tensor& grad,
                         const Tensor& param, double lr, double momentum,
                         double weight_decay);

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

class NonFiniteValue : public std::runtime_error {
 public:
  NonFiniteValue(std::size_t coordinate, const std::string& msg)
      : std::runtime_error(msg), coordinate_(coordinate) {}
  std::size_t coordinate() const { return coordinate_; }

 private:
  std::size_t coordinate_;
};

// [f(x + delta e_d) - f(x - delta e_d)] / (2 delta) for one coordinate d.
template <class F>
double central_difference(F&& f, const Tensor& x, std::size_t d,
                          double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("finite difference: delta must be > 0");
  Tensor probe = x;
  probe[d] = x[d] + delta;
  const double plus = f(std::as_const(probe));
  probe[d] = x[d] - delta;
  const double minus = f(std::as_const(probe));
  if (!std::isfinite(plus) || !std::isfinite(minus)) {
    throw NonFiniteValue(d, "finite difference: f is not finite at coordinate " +
                                std::to_string(d));
  }
  return (plus - minus) / (2.0 * delta);
}

// Dense central-difference gradient, 2 * x.size() evaluations of f.
template <class F>
Tensor finite_diff_grad(F&& f, const Tensor& x, double delta) {
  Tensor grad = Tensor::zeros_like(x);
  for (std::size_t d = 0; d < x.size(); ++d) {
    grad[d] = central_difference(f, x, d, delta);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Perceptibility
// ---------------------------------------------------------------------------

// Normalized-intensity units; zero iff the perturbation is exactly zero.
struct Perceptibility {
  double value = 0.0;
  friend bool operator==(const Perceptibility&, const Perceptibility&) = default;
};

// sqrt( (1 / (W H)) * sum_{w,h} ||dy_{w,h}||^2 ) over RGB pixels.
Perceptibility perceptibility_image(const Tensor& delta_image);
Perceptibility perceptibility_image(const Image& delta_image);

// Same root-mean-of-site-norms on a (height x width x channels_per_site)
// parameter lattice.
Perceptibility perceptibility_params(const Tensor& delta_params,
                                     std::size_t width, std::size_t height,
                                     std::size_t channels_per_site);

// ---------------------------------------------------------------------------
// PATD serialization: "PATD <ndim> <d0> ... <dn-1>\n" + little-endian f64.
// ---------------------------------------------------------------------------

void write_patd(std::ostream& out, const Tensor& t);
Tensor read_patd(std::istream& in);
void save_patd(const std::filesystem::path& path, const Tensor& t);
Tensor load_patd(const std::filesystem::path& path);

}  // namespace physadv::numkit
