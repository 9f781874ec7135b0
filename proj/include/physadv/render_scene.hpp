#pragma once

// Non-differentiable renderer for single-primitive scenes. Attacks only see
// render_scene(); nothing else about the rasterizer is part of the contract.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "physadv/image.hpp"
#include "physadv/vec3.hpp"

namespace physadv::scene {

enum class ShapeClass : std::uint8_t { kSphere, kCube, kCylinder, kCone, kTorus };
inline constexpr std::size_t kShapeClasses = 5;
inline constexpr std::array<ShapeClass, kShapeClasses> kAllShapes = {
    ShapeClass::kSphere, ShapeClass::kCube, ShapeClass::kCylinder, ShapeClass::kCone,
    ShapeClass::kTorus};

std::string_view shape_name(ShapeClass shape);
ShapeClass parse_shape(std::string_view name);

// Attackable parameters in fixed order: lighting (ambient, point, position
// xyz), rotation (Euler xyz, radians), translation (xyz), color (rgb).
inline constexpr std::size_t kSceneDims = 14;
using SceneVector = std::array<double, kSceneDims>;

struct BlackBoxScene {
  ShapeClass shape = ShapeClass::kSphere;
  std::array<double, 5> lighting{};
  std::array<double, 3> rotation{};
  std::array<double, 3> translation{};
  std::array<double, 3> color{};

  SceneVector to_vector() const;
  static BlackBoxScene from_vector(ShapeClass shape, const SceneVector& v);
  friend bool operator==(const BlackBoxScene&, const BlackBoxScene&) = default;
};

enum class ParamGroup : std::uint8_t { kLighting, kRotation, kTranslation, kColor };
inline constexpr std::array<ParamGroup, 4> kAllGroups = {
    ParamGroup::kLighting, ParamGroup::kRotation, ParamGroup::kTranslation, ParamGroup::kColor};

struct GroupRange {
  std::size_t offset;
  std::size_t size;
};
GroupRange group_range(ParamGroup group);
std::string_view group_name(ParamGroup group);

// Subset of groups; bit i corresponds to kAllGroups[i].
class GroupSet {
 public:
  constexpr GroupSet() = default;
  constexpr explicit GroupSet(std::uint8_t bits) : bits_(bits & 0xF) {}
  static constexpr GroupSet all() { return GroupSet(0xF); }
  static constexpr GroupSet none() { return GroupSet(0); }

  constexpr bool contains(ParamGroup g) const { return bits_ >> static_cast<int>(g) & 1; }
  constexpr GroupSet with(ParamGroup g) const {
    return GroupSet(static_cast<std::uint8_t>(bits_ | 1u << static_cast<int>(g)));
  }
  constexpr std::uint8_t bits() const { return bits_; }
  friend constexpr bool operator==(GroupSet, GroupSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

// Image resolution and the fixed perspective camera.
inline constexpr std::size_t kResolution = 32;
// Samples per pixel along each axis.
inline constexpr std::size_t kSupersample = 3;
inline constexpr double kCameraDistance = 1.8;
inline constexpr double kCameraElevation = 0.3490658503988659;  // pi / 9
inline constexpr double kHalfFieldOfView = 0.2181661564992912;  // 12.5 degrees

// Translations are sampled in [-kSampleBox, kSampleBox]^3 and kept within
// [-kTranslationLimit, kTranslationLimit]^3 by enforce_invariants; both keep
// the whole object inside the frame.
inline constexpr double kSampleBox = 0.02;
inline constexpr double kTranslationLimit = 0.03;
// Radius of the hemisphere shell the point light is sampled on.
inline constexpr double kLightShell = 3.0;

// Clamp color to [0,1], light magnitudes to >= 0 and translation to the
// admissible box.
void enforce_invariants(BlackBoxScene& scene);

// Adds delta on the dimensions of the selected groups only, then enforces
// the invariants.
BlackBoxScene apply_perturbation_subset(const BlackBoxScene& scene, const SceneVector& delta,
                                        GroupSet groups);
SceneVector difference(const BlackBoxScene& x, const BlackBoxScene& base);

Image render_scene(const BlackBoxScene& scene);

BlackBoxScene sample_scene(ShapeClass shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Geometry shared with dataset generation for the differentiable track.
// ---------------------------------------------------------------------------

struct Mesh {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // per vertex
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

// Object-space triangulation centered at the origin, bounding radius < 0.3.
// The sphere is rendered analytically; its mesh is used only for bounds.
const Mesh& primitive_mesh(ShapeClass shape);
inline constexpr double kSphereRadius = 0.27;

Vec3 rotate_euler(const Vec3& v, const std::array<double, 3>& angles);

// Projected pixel position of a world point through the fixed camera.
struct PixelPoint {
  double x, y, depth;
};
PixelPoint project_to_pixel(const Vec3& world);

// Orthographic view-space normal buffer (viewer at +z) of a rotated
// primitive. extent is the half-width of the view in object units.
struct NormalBuffer {
  std::size_t width = 0, height = 0;
  std::vector<Vec3> normals;
  std::vector<std::uint8_t> mask;
};
NormalBuffer orthographic_normals(ShapeClass shape, const std::array<double, 3>& rotation,
                                  double offset_x, double offset_y, double extent,
                                  std::size_t resolution);

void save_scene(const std::filesystem::path& path, const BlackBoxScene& scene);
BlackBoxScene load_scene(const std::filesystem::path& path);

}  // namespace physadv::scene
