#pragma once

// Differentiable image formation from a per-pixel normal map, a
// latitude-longitude environment light and a mixture of reflectance lobes,
// with hand-derived vector-Jacobian products for all three parameter sets.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "physadv/image.hpp"
#include "physadv/tensor.hpp"
#include "physadv/vec3.hpp"

namespace physadv::diffrender {

using numkit::Tensor;

inline constexpr double kPolarMin = 1e-3;
inline constexpr double kLogExponentMin = 0.0;   // alpha >= 1
inline constexpr double kLogExponentMax = 6.907755278982137;  // alpha <= 1000
inline constexpr std::size_t kLobeParams = 4;    // (s_R, s_G, s_B, log alpha)

// Per-pixel (azimuth, polar) normal angles, shape (height, width, 2).
struct NormalMap {
  Tensor angles;

  NormalMap() = default;
  NormalMap(std::size_t width, std::size_t height) : angles({height, width, 2}) {}
  explicit NormalMap(Tensor a);

  std::size_t width() const { return angles.shape()[1]; }
  std::size_t height() const { return angles.shape()[0]; }
  double azimuth(std::size_t x, std::size_t y) const { return angles[(y * width() + x) * 2]; }
  double polar(std::size_t x, std::size_t y) const { return angles[(y * width() + x) * 2 + 1]; }
  void set(std::size_t x, std::size_t y, double azimuth, double polar) {
    angles[(y * width() + x) * 2] = azimuth;
    angles[(y * width() + x) * 2 + 1] = polar;
  }
};

// Nonnegative radiance per texel, shape (height, width). Row i maps to polar
// angle (i + 0.5) * pi / H, column j to azimuth (j + 0.5) * 2 pi / W.
struct EnvironmentLight {
  Tensor radiance;

  EnvironmentLight() = default;
  EnvironmentLight(std::size_t width, std::size_t height, double fill = 0.0)
      : radiance({height, width}, fill) {}
  explicit EnvironmentLight(Tensor r);

  std::size_t width() const { return radiance.shape()[1]; }
  std::size_t height() const { return radiance.shape()[0]; }
};

enum class LobeKind : std::uint8_t { kDiffuse, kSpecular };

// Lobe k contributes s_{k,c} to the BRDF for diffuse lobes and
// s_{k,c} * max(0, h.n)^alpha_k with alpha_k = exp(log alpha) for specular
// lobes. The log-exponent of a diffuse lobe is inert.
struct Material {
  Tensor params;  // (lobes, 4)
  std::vector<LobeKind> kinds;

  Material() = default;
  Material(Tensor p, std::vector<LobeKind> k);

  std::size_t lobes() const { return kinds.size(); }
  double strength(std::size_t lobe, std::size_t c) const { return params[lobe * kLobeParams + c]; }
  double log_exponent(std::size_t lobe) const { return params[lobe * kLobeParams + 3]; }
};

struct PhysicalScene {
  NormalMap normals;
  EnvironmentLight light;
  Material material;
  Tensor mask;  // (height, width), 1 inside the object, 0 outside

  std::size_t width() const { return normals.width(); }
  std::size_t height() const { return normals.height(); }
  bool masked(std::size_t x, std::size_t y) const { return mask[y * width() + x] != 0.0; }
  void validate() const;
};

// A tensor triple aligned with (normals, light, material): used for
// gradients as well as for physical perturbations.
struct PhysicalParams {
  Tensor normals;
  Tensor light;
  Tensor material;

  static PhysicalParams zeros_like(const PhysicalScene& scene);
  std::size_t size() const { return normals.size() + light.size() + material.size(); }
  // Concatenation in (normals, light, material) order.
  Tensor flatten() const;
  static PhysicalParams unflatten(const Tensor& flat, const PhysicalScene& like);
};

// n = (sin t cos p, sin t sin p, cos t); the viewer looks down -z from +z.
Vec3 angles_to_normal(double azimuth, double polar);
// Inverse of angles_to_normal on the unit sphere (azimuth in [0, 2 pi)).
void normal_to_angles(const Vec3& n, double& azimuth, double& polar);

// dOmega(i, j) = (2 pi / W) (pi / H) sin(theta_i), shape (height, width).
Tensor solid_angle_weights(std::size_t width, std::size_t height);
Vec3 light_direction(std::size_t row, std::size_t col, std::size_t width, std::size_t height);

Image render(const PhysicalScene& scene);
PhysicalParams render_backward(const PhysicalScene& scene, const Image& upstream);

// Wrap azimuths into [0, 2 pi), clamp polar angles, light and lobe strengths.
void enforce_invariants(PhysicalScene& scene);

// X0 (+) delta with invariants enforced; only normals, light and material
// values change.
PhysicalScene apply_delta(const PhysicalScene& base, const PhysicalParams& delta);
// X - X0 with azimuth differences wrapped into (-pi, pi].
PhysicalParams difference(const PhysicalScene& x, const PhysicalScene& base);

// One byte per hinge / clamp decision in render(): (n.w > 0), (h.n > 0) per
// masked pixel and texel, and (value < 1) per masked pixel channel. Two
// scenes with equal patterns lie on the same smooth piece of render().
std::vector<std::uint8_t> kink_pattern(const PhysicalScene& scene);

// Random test scene: front-facing normals, blob lighting, one diffuse and
// one specular lobe, roughly elliptic mask.
PhysicalScene random_scene(std::size_t width, std::size_t height,
                           std::size_t light_width, std::size_t light_height,
                           std::uint64_t seed);

// key = value text with [normals]/[light]/[material]/[mask] sections; tensor
// payloads live in sibling PATD files named "<stem>.<section>.patd".
void save_scene(const std::filesystem::path& path, const PhysicalScene& scene);
PhysicalScene load_scene(const std::filesystem::path& path);

}  // namespace physadv::diffrender
