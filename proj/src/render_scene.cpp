#include "physadv/render_scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "physadv/rng.hpp"

namespace physadv::scene {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::array<std::string_view, kShapeClasses> kShapeNames = {"sphere", "cube", "cylinder",
                                                                      "cone", "torus"};
constexpr std::array<std::string_view, 4> kGroupNames = {"lighting", "rotation", "translation",
                                                         "color"};
constexpr double kNearPlane = 0.1;
constexpr double kMinAttenuation = 0.25;

struct Camera {
  Vec3 eye, right, up, forward;
  double focal;
};

const Camera& camera() {
  static const Camera cam = [] {
    Camera c;
    c.eye = {0.0, kCameraDistance * std::sin(kCameraElevation),
             kCameraDistance * std::cos(kCameraElevation)};
    c.forward = normalized(Vec3{0, 0, 0} - c.eye);
    c.right = normalized(cross(c.forward, Vec3{0, 1, 0}));
    c.up = cross(c.right, c.forward);
    c.focal = 1.0 / std::tan(kHalfFieldOfView);
    return c;
  }();
  return cam;
}

void add_vertex(Mesh& m, const Vec3& p, const Vec3& n) {
  m.positions.push_back(p);
  m.normals.push_back(normalized(n));
}

void add_triangle(Mesh& m, std::uint32_t a, std::uint32_t b, std::uint32_t c) {
  m.triangles.push_back({a, b, c});
}

// Quad a-b-c-d in counter-clockwise order seen from outside.
void add_flat_quad(Mesh& m, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 n = normalized(cross(b - a, c - a));
  const auto base = static_cast<std::uint32_t>(m.positions.size());
  for (const Vec3& p : {a, b, c, d}) add_vertex(m, p, n);
  add_triangle(m, base, base + 1, base + 2);
  add_triangle(m, base, base + 2, base + 3);
}

Mesh make_cube() {
  constexpr double h = 0.17;
  Mesh m;
  const Vec3 v[8] = {{-h, -h, -h}, {h, -h, -h}, {h, h, -h}, {-h, h, -h},
                     {-h, -h, h},  {h, -h, h},  {h, h, h},  {-h, h, h}};
  add_flat_quad(m, v[4], v[5], v[6], v[7]);  // +z
  add_flat_quad(m, v[1], v[0], v[3], v[2]);  // -z
  add_flat_quad(m, v[5], v[1], v[2], v[6]);  // +x
  add_flat_quad(m, v[0], v[4], v[7], v[3]);  // -x
  add_flat_quad(m, v[7], v[6], v[2], v[3]);  // +y
  add_flat_quad(m, v[0], v[1], v[5], v[4]);  // -y
  return m;
}

// Disc cap at height y facing +y (up) or -y.
void add_cap(Mesh& m, double radius, double y, bool up, int segments) {
  const Vec3 n{0, up ? 1.0 : -1.0, 0};
  const auto center = static_cast<std::uint32_t>(m.positions.size());
  add_vertex(m, {0, y, 0}, n);
  for (int i = 0; i < segments; ++i) {
    const double a = 2 * kPi * i / segments;
    add_vertex(m, {radius * std::cos(a), y, radius * std::sin(a)}, n);
  }
  for (int i = 0; i < segments; ++i) {
    const auto a = center + 1 + static_cast<std::uint32_t>(i);
    const auto b = center + 1 + static_cast<std::uint32_t>((i + 1) % segments);
    if (up) {
      add_triangle(m, center, b, a);
    } else {
      add_triangle(m, center, a, b);
    }
  }
}

Mesh make_cylinder() {
  constexpr double r = 0.15, h = 0.25;
  constexpr int segments = 32;
  Mesh m;
  const auto base = static_cast<std::uint32_t>(m.positions.size());
  for (int i = 0; i < segments; ++i) {
    const double a = 2 * kPi * i / segments;
    const Vec3 n{std::cos(a), 0, std::sin(a)};
    add_vertex(m, {r * n.x, -h, r * n.z}, n);
    add_vertex(m, {r * n.x, h, r * n.z}, n);
  }
  for (int i = 0; i < segments; ++i) {
    const auto a0 = base + 2 * static_cast<std::uint32_t>(i);
    const auto b0 = base + 2 * static_cast<std::uint32_t>((i + 1) % segments);
    add_triangle(m, a0, a0 + 1, b0 + 1);
    add_triangle(m, a0, b0 + 1, b0);
  }
  add_cap(m, r, h, true, segments);
  add_cap(m, r, -h, false, segments);
  return m;
}

Mesh make_cone() {
  constexpr double r = 0.22, y0 = -0.18, y1 = 0.26;
  constexpr int segments = 32;
  const double height = y1 - y0;
  Mesh m;
  auto side_normal = [&](double a) {
    return Vec3{height * std::cos(a), r, height * std::sin(a)};
  };
  for (int i = 0; i < segments; ++i) {
    const double a = 2 * kPi * i / segments, b = 2 * kPi * (i + 1) / segments;
    const auto base = static_cast<std::uint32_t>(m.positions.size());
    add_vertex(m, {r * std::cos(a), y0, r * std::sin(a)}, side_normal(a));
    add_vertex(m, {0, y1, 0}, side_normal(0.5 * (a + b)));
    add_vertex(m, {r * std::cos(b), y0, r * std::sin(b)}, side_normal(b));
    add_triangle(m, base, base + 1, base + 2);
  }
  add_cap(m, r, y0, false, segments);
  return m;
}

Mesh make_torus() {
  constexpr double big = 0.2, small = 0.085;
  constexpr int major = 32, minor = 16;
  Mesh m;
  for (int i = 0; i < major; ++i) {
    const double u = 2 * kPi * i / major;
    for (int j = 0; j < minor; ++j) {
      const double v = 2 * kPi * j / minor;
      const Vec3 n{std::cos(v) * std::cos(u), std::sin(v), std::cos(v) * std::sin(u)};
      const Vec3 c{big * std::cos(u), 0, big * std::sin(u)};
      add_vertex(m, c + n * small, n);
    }
  }
  auto idx = [&](int i, int j) {
    return static_cast<std::uint32_t>((i % major) * minor + (j % minor));
  };
  for (int i = 0; i < major; ++i) {
    for (int j = 0; j < minor; ++j) {
      add_triangle(m, idx(i, j), idx(i, j + 1), idx(i + 1, j + 1));
      add_triangle(m, idx(i, j), idx(i + 1, j + 1), idx(i + 1, j));
    }
  }
  return m;
}

Mesh make_sphere() {
  constexpr int rings = 16, sectors = 32;
  Mesh m;
  for (int i = 0; i <= rings; ++i) {
    const double t = kPi * i / rings;
    for (int j = 0; j < sectors; ++j) {
      const double p = 2 * kPi * j / sectors;
      const Vec3 n{std::sin(t) * std::cos(p), std::cos(t), std::sin(t) * std::sin(p)};
      add_vertex(m, n * kSphereRadius, n);
    }
  }
  for (int i = 0; i < rings; ++i) {
    for (int j = 0; j < sectors; ++j) {
      const auto a = static_cast<std::uint32_t>(i * sectors + j);
      const auto b = static_cast<std::uint32_t>(i * sectors + (j + 1) % sectors);
      add_triangle(m, a, b + sectors, a + sectors);
      add_triangle(m, a, b, b + sectors);
    }
  }
  return m;
}

struct Fragment {
  double depth = std::numeric_limits<double>::infinity();
  Vec3 position, normal;
};

double shade(const BlackBoxScene& s, const Vec3& p, const Vec3& n, std::size_t channel) {
  const Vec3 light_pos{s.lighting[2], s.lighting[3], s.lighting[4]};
  const Vec3 to_light = light_pos - p;
  const double d2 = dot(to_light, to_light);
  double cos_term = 0.0;
  if (d2 > 0.0) cos_term = std::max(0.0, dot(n, to_light) / std::sqrt(d2));
  const double radiance = s.lighting[0] + s.lighting[1] * cos_term / std::max(d2, kMinAttenuation);
  return std::clamp(s.color[channel] * radiance, 0.0, 1.0);
}

Vec3 pixel_ray(std::size_t x, std::size_t y, std::size_t resolution) {
  const Camera& cam = camera();
  const double u = (2.0 * (static_cast<double>(x) + 0.5) / resolution - 1.0) / cam.focal;
  const double v = (1.0 - 2.0 * (static_cast<double>(y) + 0.5) / resolution) / cam.focal;
  return normalized(cam.forward + cam.right * u + cam.up * v);
}

void rasterize_sphere(const BlackBoxScene& s, std::vector<Fragment>& frags, std::size_t res) {
  const Vec3 center{s.translation[0], s.translation[1], s.translation[2]};
  const Vec3 oc = camera().eye - center;
  const double c = dot(oc, oc) - kSphereRadius * kSphereRadius;
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const Vec3 d = pixel_ray(x, y, res);
      const double b = dot(oc, d);
      const double disc = b * b - c;
      if (disc < 0.0) continue;
      const double t = -b - std::sqrt(disc);
      if (t <= kNearPlane) continue;
      Fragment& f = frags[y * res + x];
      f.depth = t;
      f.position = camera().eye + d * t;
      f.normal = normalized(f.position - center);
    }
  }
}

void rasterize_mesh(const BlackBoxScene& s, std::vector<Fragment>& frags, std::size_t res) {
  const Mesh& mesh = primitive_mesh(s.shape);
  const Vec3 offset{s.translation[0], s.translation[1], s.translation[2]};
  std::vector<Vec3> world(mesh.positions.size()), normals(mesh.normals.size());
  std::vector<PixelPoint> screen(mesh.positions.size());
  for (std::size_t i = 0; i < world.size(); ++i) {
    world[i] = rotate_euler(mesh.positions[i], s.rotation) + offset;
    normals[i] = rotate_euler(mesh.normals[i], s.rotation);
    screen[i] = project_to_pixel(world[i]);
    if (!std::isfinite(screen[i].x) || !std::isfinite(screen[i].y) ||
        screen[i].depth <= kNearPlane) {
      throw std::runtime_error("render_scene: degenerate mesh after transform");
    }
  }
  const double scale = static_cast<double>(res) / kResolution;
  for (const auto& tri : mesh.triangles) {
    PixelPoint p[3];
    for (int k = 0; k < 3; ++k) {
      p[k] = screen[tri[k]];
      p[k].x *= scale;
      p[k].y *= scale;
    }
    const double area = (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y);
    if (area == 0.0) continue;
    const auto lo_x = static_cast<long>(std::max(0.0, std::floor(std::min({p[0].x, p[1].x, p[2].x}))));
    const auto hi_x = static_cast<long>(std::min<double>(res - 1, std::ceil(std::max({p[0].x, p[1].x, p[2].x}))));
    const auto lo_y = static_cast<long>(std::max(0.0, std::floor(std::min({p[0].y, p[1].y, p[2].y}))));
    const auto hi_y = static_cast<long>(std::min<double>(res - 1, std::ceil(std::max({p[0].y, p[1].y, p[2].y}))));
    for (long y = lo_y; y <= hi_y; ++y) {
      for (long x = lo_x; x <= hi_x; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        double b[3];
        b[0] = ((p[1].x - px) * (p[2].y - py) - (p[2].x - px) * (p[1].y - py)) / area;
        b[1] = ((p[2].x - px) * (p[0].y - py) - (p[0].x - px) * (p[2].y - py)) / area;
        b[2] = 1.0 - b[0] - b[1];
        if (b[0] < 0.0 || b[1] < 0.0 || b[2] < 0.0) continue;
        // Perspective-correct weights.
        double w[3], wsum = 0.0;
        for (int k = 0; k < 3; ++k) {
          w[k] = b[k] / p[k].depth;
          wsum += w[k];
        }
        const double depth = 1.0 / wsum;
        Fragment& f = frags[static_cast<std::size_t>(y) * res + static_cast<std::size_t>(x)];
        if (depth >= f.depth) continue;
        f.depth = depth;
        f.position = (world[tri[0]] * w[0] + world[tri[1]] * w[1] + world[tri[2]] * w[2]) * depth;
        f.normal = normalized(normals[tri[0]] * w[0] + normals[tri[1]] * w[1] + normals[tri[2]] * w[2]);
      }
    }
  }
}

bool finite_scene(const BlackBoxScene& s) {
  for (double v : s.to_vector()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

std::string_view shape_name(ShapeClass shape) { return kShapeNames.at(static_cast<std::size_t>(shape)); }

ShapeClass parse_shape(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i) {
    if (kShapeNames[i] == name) return static_cast<ShapeClass>(i);
  }
  throw std::invalid_argument("unknown shape class: " + std::string(name));
}

SceneVector BlackBoxScene::to_vector() const {
  SceneVector v{};
  std::copy(lighting.begin(), lighting.end(), v.begin());
  std::copy(rotation.begin(), rotation.end(), v.begin() + 5);
  std::copy(translation.begin(), translation.end(), v.begin() + 8);
  std::copy(color.begin(), color.end(), v.begin() + 11);
  return v;
}

BlackBoxScene BlackBoxScene::from_vector(ShapeClass shape, const SceneVector& v) {
  BlackBoxScene s;
  s.shape = shape;
  std::copy(v.begin(), v.begin() + 5, s.lighting.begin());
  std::copy(v.begin() + 5, v.begin() + 8, s.rotation.begin());
  std::copy(v.begin() + 8, v.begin() + 11, s.translation.begin());
  std::copy(v.begin() + 11, v.end(), s.color.begin());
  return s;
}

GroupRange group_range(ParamGroup group) {
  switch (group) {
    case ParamGroup::kLighting: return {0, 5};
    case ParamGroup::kRotation: return {5, 3};
    case ParamGroup::kTranslation: return {8, 3};
    case ParamGroup::kColor: return {11, 3};
  }
  throw std::invalid_argument("unknown parameter group");
}

std::string_view group_name(ParamGroup group) { return kGroupNames.at(static_cast<std::size_t>(group)); }

void enforce_invariants(BlackBoxScene& scene) {
  for (double& c : scene.color) c = std::clamp(c, 0.0, 1.0);
  scene.lighting[0] = std::max(scene.lighting[0], 0.0);
  scene.lighting[1] = std::max(scene.lighting[1], 0.0);
  for (double& t : scene.translation) t = std::clamp(t, -kTranslationLimit, kTranslationLimit);
}

BlackBoxScene apply_perturbation_subset(const BlackBoxScene& scene, const SceneVector& delta,
                                        GroupSet groups) {
  SceneVector v = scene.to_vector();
  for (ParamGroup g : kAllGroups) {
    if (!groups.contains(g)) continue;
    const GroupRange r = group_range(g);
    for (std::size_t i = r.offset; i < r.offset + r.size; ++i) v[i] += delta[i];
  }
  BlackBoxScene out = BlackBoxScene::from_vector(scene.shape, v);
  enforce_invariants(out);
  return out;
}

SceneVector difference(const BlackBoxScene& x, const BlackBoxScene& base) {
  const SceneVector a = x.to_vector(), b = base.to_vector();
  SceneVector d{};
  for (std::size_t i = 0; i < kSceneDims; ++i) d[i] = a[i] - b[i];
  return d;
}

Vec3 rotate_euler(const Vec3& v, const std::array<double, 3>& angles) {
  // R = Rz * Ry * Rx.
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  const Vec3 a{v.x, cx * v.y - sx * v.z, sx * v.y + cx * v.z};
  const Vec3 b{cy * a.x + sy * a.z, a.y, -sy * a.x + cy * a.z};
  return {cz * b.x - sz * b.y, sz * b.x + cz * b.y, b.z};
}

PixelPoint project_to_pixel(const Vec3& world) {
  const Camera& cam = camera();
  const Vec3 rel = world - cam.eye;
  const double depth = dot(rel, cam.forward);
  const double u = dot(rel, cam.right) / depth * cam.focal;
  const double v = dot(rel, cam.up) / depth * cam.focal;
  return {(u + 1.0) * 0.5 * kResolution, (1.0 - v) * 0.5 * kResolution, depth};
}

const Mesh& primitive_mesh(ShapeClass shape) {
  static const std::array<Mesh, kShapeClasses> meshes = {make_sphere(), make_cube(), make_cylinder(),
                                                         make_cone(), make_torus()};
  return meshes.at(static_cast<std::size_t>(shape));
}

Image render_scene(const BlackBoxScene& scene) {
  if (!finite_scene(scene)) throw std::invalid_argument("render_scene: non-finite parameter");
  constexpr std::size_t res = kResolution * kSupersample;
  std::vector<Fragment> frags(res * res);
  if (scene.shape == ShapeClass::kSphere) {
    rasterize_sphere(scene, frags, res);
  } else {
    rasterize_mesh(scene, frags, res);
  }
  // Box filter over each kSupersample x kSupersample block.
  constexpr double weight = 1.0 / (kSupersample * kSupersample);
  Image img(kResolution, kResolution);
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const Fragment& f = frags[y * res + x];
      if (!std::isfinite(f.depth)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(x / kSupersample, y / kSupersample, c) += weight * shade(scene, f.position, f.normal, c);
      }
    }
  }
  // Accumulation rounding can overshoot a saturated pixel by an ulp.
  for (double& v : img.data()) v = std::min(v, 1.0);
  return img;
}

BlackBoxScene sample_scene(ShapeClass shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "black-box-scene"));
  BlackBoxScene s;
  s.shape = shape;
  for (double& r : s.rotation) r = rng.uniform(0.0, kPi);
  for (double& t : s.translation) t = rng.uniform(-kSampleBox, kSampleBox);
  for (double& c : s.color) c = rng.uniform(0.2, 1.0);
  s.lighting[0] = rng.uniform(0.2, 0.5);
  s.lighting[1] = rng.uniform(0.5, 1.5);
  // Uniform on the hemisphere shell facing the camera.
  const double up = rng.uniform(-1.0, 1.0);
  const double az = rng.uniform(0.0, 2 * kPi);
  const double ring = std::sqrt(std::max(0.0, 1.0 - up * up));
  Vec3 dir{ring * std::cos(az), up, ring * std::sin(az)};
  if (dot(dir, camera().eye) < 0.0) dir = -dir;
  s.lighting[2] = kLightShell * dir.x;
  s.lighting[3] = kLightShell * dir.y;
  s.lighting[4] = kLightShell * dir.z;
  return s;
}

NormalBuffer orthographic_normals(ShapeClass shape, const std::array<double, 3>& rotation,
                                  double offset_x, double offset_y, double extent,
                                  std::size_t resolution) {
  if (resolution == 0 || !(extent > 0.0)) throw std::invalid_argument("orthographic_normals: bad view");
  NormalBuffer buf;
  buf.width = buf.height = resolution;
  buf.normals.assign(resolution * resolution, Vec3{0, 0, 1});
  buf.mask.assign(resolution * resolution, 0);
  const double res = static_cast<double>(resolution);
  auto to_pixel = [&](double wx, double wy, double& px, double& py) {
    px = ((wx - offset_x) / extent + 1.0) * 0.5 * res;
    py = (1.0 - (wy - offset_y) / extent) * 0.5 * res;
  };
  std::vector<double> zbuf(resolution * resolution, -std::numeric_limits<double>::infinity());

  if (shape == ShapeClass::kSphere) {
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        const double wx = ((static_cast<double>(x) + 0.5) / res * 2.0 - 1.0) * extent + offset_x;
        const double wy = (1.0 - (static_cast<double>(y) + 0.5) / res * 2.0) * extent + offset_y;
        const double r2 = wx * wx + wy * wy;
        if (r2 >= kSphereRadius * kSphereRadius) continue;
        const Vec3 p{wx, wy, std::sqrt(kSphereRadius * kSphereRadius - r2)};
        buf.normals[y * resolution + x] = p * (1.0 / kSphereRadius);
        buf.mask[y * resolution + x] = 1;
      }
    }
    return buf;
  }

  const Mesh& mesh = primitive_mesh(shape);
  std::vector<Vec3> pos(mesh.positions.size()), nrm(mesh.normals.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] = rotate_euler(mesh.positions[i], rotation);
    nrm[i] = rotate_euler(mesh.normals[i], rotation);
  }
  for (const auto& tri : mesh.triangles) {
    double sx[3], sy[3];
    for (int k = 0; k < 3; ++k) to_pixel(pos[tri[k]].x, pos[tri[k]].y, sx[k], sy[k]);
    const double area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0]);
    if (area == 0.0) continue;
    const long lo_x = std::max(0L, static_cast<long>(std::floor(std::min({sx[0], sx[1], sx[2]}))));
    const long hi_x = std::min(static_cast<long>(resolution) - 1,
                               static_cast<long>(std::ceil(std::max({sx[0], sx[1], sx[2]}))));
    const long lo_y = std::max(0L, static_cast<long>(std::floor(std::min({sy[0], sy[1], sy[2]}))));
    const long hi_y = std::min(static_cast<long>(resolution) - 1,
                               static_cast<long>(std::ceil(std::max({sy[0], sy[1], sy[2]}))));
    for (long y = lo_y; y <= hi_y; ++y) {
      for (long x = lo_x; x <= hi_x; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const double b0 = ((sx[1] - px) * (sy[2] - py) - (sx[2] - px) * (sy[1] - py)) / area;
        const double b1 = ((sx[2] - px) * (sy[0] - py) - (sx[0] - px) * (sy[2] - py)) / area;
        const double b2 = 1.0 - b0 - b1;
        if (b0 < 0.0 || b1 < 0.0 || b2 < 0.0) continue;
        const double z = b0 * pos[tri[0]].z + b1 * pos[tri[1]].z + b2 * pos[tri[2]].z;
        const std::size_t i = static_cast<std::size_t>(y) * resolution + static_cast<std::size_t>(x);
        if (z <= zbuf[i]) continue;
        Vec3 n = normalized(nrm[tri[0]] * b0 + nrm[tri[1]] * b1 + nrm[tri[2]] * b2);
        // Visible normals face the viewer; interpolation can tip silhouette
        // normals slightly past the horizon.
        if (n.z < 0.02) {
          n.z = 0.02;
          n = normalized(n);
        }
        zbuf[i] = z;
        buf.normals[i] = n;
        buf.mask[i] = 1;
      }
    }
  }
  return buf;
}

void save_scene(const std::filesystem::path& path, const BlackBoxScene& scene) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file " + path.string());
  out.precision(17);
  auto line = [&](std::string_view key, const auto& values) {
    out << key << " =";
    for (double v : values) out << ' ' << v;
    out << '\n';
  };
  out << "shape = " << shape_name(scene.shape) << '\n';
  line("lighting", scene.lighting);
  line("rotation", scene.rotation);
  line("translation", scene.translation);
  line("color", scene.color);
  if (!out) throw std::runtime_error("failed writing scene file " + path.string());
}

BlackBoxScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene file " + path.string());
  BlackBoxScene s;
  bool seen[5] = {};
  std::string raw;
  while (std::getline(in, raw)) {
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const auto eq = raw.find('=');
    if (eq == std::string::npos) {
      if (raw.find_first_not_of(" \t\r") != std::string::npos) {
        throw std::runtime_error("malformed scene line: " + raw);
      }
      continue;
    }
    std::istringstream key_stream(raw.substr(0, eq)), value_stream(raw.substr(eq + 1));
    std::string key;
    key_stream >> key;
    auto read = [&](auto& arr, int slot) {
      for (double& v : arr) {
        if (!(value_stream >> v)) throw std::runtime_error("scene key '" + key + "' needs more values");
      }
      std::string extra;
      if (value_stream >> extra) throw std::runtime_error("scene key '" + key + "' has extra values");
      seen[slot] = true;
    };
    if (key == "shape") {
      std::string name;
      value_stream >> name;
      s.shape = parse_shape(name);
      seen[0] = true;
    } else if (key == "lighting") {
      read(s.lighting, 1);
    } else if (key == "rotation") {
      read(s.rotation, 2);
    } else if (key == "translation") {
      read(s.translation, 3);
    } else if (key == "color") {
      read(s.color, 4);
    } else {
      throw std::runtime_error("unknown scene key: " + key);
    }
  }
  for (bool b : seen) {
    if (!b) throw std::runtime_error("scene file is missing a key: " + path.string());
  }
  return s;
}

}  // namespace physadv::scene
