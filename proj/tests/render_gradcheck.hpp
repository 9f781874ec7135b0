#pragma once

// Central-difference check of render_backward against the scalar
// <upstream, render(X)>. Coordinates whose +-delta probe changes any hinge
// or clamp decision are excluded.

#include "gradcheck.hpp"
#include "physadv/numkit.hpp"
#include "physadv/render_diff.hpp"

namespace physadv::testing {

struct RenderGradCheck {
  GradCheckStats normals, light, material;

  double max_rel_error() const {
    return std::max({normals.max_rel_error, light.max_rel_error, material.max_rel_error});
  }
  std::size_t checked() const { return normals.checked + light.checked + material.checked; }
  std::size_t excluded() const { return normals.excluded + light.excluded + material.excluded; }
};

inline RenderGradCheck check_render_gradients(const diffrender::PhysicalScene& scene,
                                              const Image& upstream, double delta) {
  const diffrender::PhysicalParams analytic = diffrender::render_backward(scene, upstream);
  const auto base_pattern = diffrender::kink_pattern(scene);
  RenderGradCheck out;

  auto check_block = [&](auto select, const numkit::Tensor& grad,
                         GradCheckStats& stats) {
    const std::size_t n = grad.size();
    for (std::size_t d = 0; d < n; ++d) {
      diffrender::PhysicalScene probe = scene;
      numkit::Tensor& values = select(probe);
      const double x0 = values[d];
      values[d] = x0 + delta;
      const double plus = numkit::dot(upstream.tensor(), diffrender::render(probe).tensor());
      const bool plus_smooth = diffrender::kink_pattern(probe) == base_pattern;
      values[d] = x0 - delta;
      const double minus = numkit::dot(upstream.tensor(), diffrender::render(probe).tensor());
      const bool minus_smooth = diffrender::kink_pattern(probe) == base_pattern;
      if (!plus_smooth || !minus_smooth) {
        ++stats.excluded;
        continue;
      }
      stats.add(grad[d], (plus - minus) / (2.0 * delta));
    }
  };

  check_block([](diffrender::PhysicalScene& s) -> numkit::Tensor& { return s.normals.angles; },
              analytic.normals, out.normals);
  check_block([](diffrender::PhysicalScene& s) -> numkit::Tensor& { return s.light.radiance; },
              analytic.light, out.light);
  check_block([](diffrender::PhysicalScene& s) -> numkit::Tensor& { return s.material.params; },
              analytic.material, out.material);
  return out;
}

}  // namespace physadv::testing
