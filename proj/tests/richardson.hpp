#pragma once

// Smooth scene stub for checking zeroth-order derivative estimates: the
// differentiable renderer followed by a linear softmax classifier, probed on
// light and material coordinates where render() is smooth.

#include <cmath>
#include <vector>

#include "physadv/attack.hpp"
#include "physadv/render_diff.hpp"
#include "physadv/rng.hpp"

namespace physadv::testing {

struct RichardsonReport {
  std::size_t coordinates = 0;
  double error_coarse = 0.0;  // summed |estimate - analytic| at delta = 1e-2
  double error_fine = 0.0;    // same at delta = 1e-3
  double ratio() const { return error_coarse / error_fine; }
};

inline RichardsonReport zoo_richardson(std::uint64_t seed, std::size_t probes) {
  using namespace diffrender;
  constexpr double kCoarse = 1e-2, kFine = 1e-3;
  const PhysicalScene base = random_scene(8, 8, 8, 4, seed);
  const std::size_t pixels = base.width() * base.height() * 3, classes = 3, target = 0;
  Rng rng(derive_seed(seed, "richardson"));
  std::vector<double> w(classes * pixels);
  for (double& v : w) v = 3.0 * rng.normal() / std::sqrt(static_cast<double>(pixels));

  auto softmax = [&](const Image& y) {
    std::vector<double> z(classes, 0.0);
    double top = -1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t i = 0; i < pixels; ++i) z[k] += w[k * pixels + i] * y[i];
      top = std::max(top, z[k]);
    }
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - top));
    for (double& v : z) v /= sum;
    return z;
  };
  const Tensor flat0 = PhysicalParams::zeros_like(base).flatten();
  auto scene_at = [&](const Tensor& flat) { return apply_delta(base, PhysicalParams::unflatten(flat, base)); };
  auto objective = [&](const Tensor& flat) { return softmax(render(scene_at(flat)))[target]; };

  // dZ_c / dY = Z_c (w_c - sum_k Z_k w_k), pulled back through the renderer.
  const Image y = render(base);
  const std::vector<double> z = softmax(y);
  Image up(base.width(), base.height());
  for (std::size_t i = 0; i < pixels; ++i) {
    double mix = 0.0;
    for (std::size_t k = 0; k < classes; ++k) mix += z[k] * w[k * pixels + i];
    up[i] = z[target] * (w[target * pixels + i] - mix);
  }
  const Tensor analytic = render_backward(base, up).flatten();

  const std::size_t first = base.normals.angles.size();
  const auto pattern = kink_pattern(base);
  RichardsonReport rep;
  for (std::size_t attempt = 0; rep.coordinates < probes && attempt < 50 * probes; ++attempt) {
    const std::size_t d = first + rng.index(flat0.size() - first);
    if (analytic[d] == 0.0) continue;  // inert coordinate
    Tensor plus = flat0, minus = flat0;
    plus[d] += kCoarse;
    minus[d] -= kCoarse;
    if (kink_pattern(scene_at(plus)) != pattern || kink_pattern(scene_at(minus)) != pattern) continue;
    // Probes clipped by enforce_invariants would not be symmetric.
    if (std::abs(difference(scene_at(plus), base).flatten()[d] - kCoarse) > 1e-12 ||
        std::abs(difference(scene_at(minus), base).flatten()[d] + kCoarse) > 1e-12) {
      continue;
    }
    const double coarse = attack::zoo_coordinate_derivative(objective, {}, flat0, d, kCoarse);
    const double fine = attack::zoo_coordinate_derivative(objective, {}, flat0, d, kFine);
    rep.error_coarse += std::abs(coarse - analytic[d]);
    rep.error_fine += std::abs(fine - analytic[d]);
    ++rep.coordinates;
  }
  return rep;
}

}  // namespace physadv::testing
