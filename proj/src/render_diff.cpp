#include "physadv/render_diff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "physadv/numkit.hpp"
#include "physadv/rng.hpp"

namespace physadv::diffrender {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr Vec3 kView{0.0, 0.0, 1.0};

struct Texel {
  Vec3 dir;
  Vec3 half;
  double weight;  // solid angle
};

std::vector<Texel> texel_table(std::size_t width, std::size_t height) {
  const Tensor weights = solid_angle_weights(width, height);
  std::vector<Texel> table;
  table.reserve(width * height);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const Vec3 dir = light_direction(i, j, width, height);
      table.push_back({dir, normalized(dir + kView), weights[i * width + j]});
    }
  }
  return table;
}

struct LobeCache {
  std::size_t count = 0;
  double exponent[8] = {};
  bool specular[8] = {};
};

LobeCache lobe_cache(const Material& m) {
  if (m.lobes() > 8) throw std::invalid_argument("render: at most 8 material lobes");
  LobeCache cache;
  cache.count = m.lobes();
  for (std::size_t k = 0; k < m.lobes(); ++k) {
    cache.specular[k] = m.kinds[k] == LobeKind::kSpecular;
    cache.exponent[k] = cache.specular[k] ? std::exp(m.log_exponent(k)) : 0.0;
  }
  return cache;
}

double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;
  return w;
}

}  // namespace

NormalMap::NormalMap(Tensor a) : angles(std::move(a)) {
  if (angles.ndim() != 3 || angles.shape()[2] != 2) {
    throw std::invalid_argument("normal map: expected (height, width, 2), got " +
                                numkit::shape_string(angles.shape()));
  }
}

EnvironmentLight::EnvironmentLight(Tensor r) : radiance(std::move(r)) {
  if (radiance.ndim() != 2) {
    throw std::invalid_argument("environment light: expected (height, width), got " +
                                numkit::shape_string(radiance.shape()));
  }
}

Material::Material(Tensor p, std::vector<LobeKind> k) : params(std::move(p)), kinds(std::move(k)) {
  if (params.ndim() != 2 || params.shape()[1] != kLobeParams || params.shape()[0] != kinds.size()) {
    throw std::invalid_argument("material: expected (lobes, 4) parameters with one kind per lobe");
  }
}

void PhysicalScene::validate() const {
  if (normals.angles.ndim() != 3 || light.radiance.ndim() != 2 || material.params.ndim() != 2) {
    throw std::invalid_argument("physical scene: missing parameter set");
  }
  if (mask.shape() != numkit::Shape{height(), width()}) {
    throw std::invalid_argument("physical scene: mask shape " + numkit::shape_string(mask.shape()) +
                                " does not match normal map " +
                                numkit::shape_string(normals.angles.shape()));
  }
  if (material.kinds.size() != material.params.shape()[0]) {
    throw std::invalid_argument("physical scene: material kinds do not match lobes");
  }
}

PhysicalParams PhysicalParams::zeros_like(const PhysicalScene& scene) {
  return {Tensor::zeros_like(scene.normals.angles), Tensor::zeros_like(scene.light.radiance),
          Tensor::zeros_like(scene.material.params)};
}

Tensor PhysicalParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const Tensor* t : {&normals, &light, &material}) {
    flat.insert(flat.end(), t->data().begin(), t->data().end());
  }
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

PhysicalParams PhysicalParams::unflatten(const Tensor& flat, const PhysicalScene& like) {
  PhysicalParams out = zeros_like(like);
  if (flat.size() != out.size()) {
    throw std::invalid_argument("physical params: flat size " + std::to_string(flat.size()) +
                                " != " + std::to_string(out.size()));
  }
  std::size_t offset = 0;
  for (Tensor* t : {&out.normals, &out.light, &out.material}) {
    std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(offset), t->size(),
                t->data().begin());
    offset += t->size();
  }
  return out;
}

Vec3 angles_to_normal(double azimuth, double polar) {
  const double st = std::sin(polar);
  return {st * std::cos(azimuth), st * std::sin(azimuth), std::cos(polar)};
}

void normal_to_angles(const Vec3& n, double& azimuth, double& polar) {
  const Vec3 u = normalized(n);
  polar = std::acos(std::clamp(u.z, -1.0, 1.0));
  azimuth = wrap_angle(std::atan2(u.y, u.x));
}

Tensor solid_angle_weights(std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw std::invalid_argument("solid_angle_weights: empty grid");
  Tensor w({height, width});
  const double cell = (kTwoPi / static_cast<double>(width)) * (kPi / static_cast<double>(height));
  for (std::size_t i = 0; i < height; ++i) {
    const double polar = (static_cast<double>(i) + 0.5) * kPi / static_cast<double>(height);
    for (std::size_t j = 0; j < width; ++j) w[i * width + j] = cell * std::sin(polar);
  }
  return w;
}

Vec3 light_direction(std::size_t row, std::size_t col, std::size_t width, std::size_t height) {
  const double polar = (static_cast<double>(row) + 0.5) * kPi / static_cast<double>(height);
  const double azimuth = (static_cast<double>(col) + 0.5) * kTwoPi / static_cast<double>(width);
  return angles_to_normal(azimuth, polar);
}

Image render(const PhysicalScene& scene) {
  scene.validate();
  const std::size_t W = scene.width(), H = scene.height();
  const auto texels = texel_table(scene.light.width(), scene.light.height());
  const LobeCache lobes = lobe_cache(scene.material);
  const Tensor& L = scene.light.radiance;

  Image out(W, H);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!scene.masked(x, y)) continue;
      const Vec3 n = angles_to_normal(scene.normals.azimuth(x, y), scene.normals.polar(x, y));
      // Per-lobe irradiance-weighted lobe values; the channel sum is a
      // strength-weighted combination of these.
      double lobe_sum[8] = {};
      for (std::size_t t = 0; t < texels.size(); ++t) {
        if (L[t] == 0.0) continue;
        const double cosine = dot(n, texels[t].dir);
        if (cosine <= 0.0) continue;
        const double irradiance = L[t] * texels[t].weight * cosine;
        const double hn = dot(texels[t].half, n);
        for (std::size_t k = 0; k < lobes.count; ++k) {
          if (!lobes.specular[k]) {
            lobe_sum[k] += irradiance;
          } else if (hn > 0.0) {
            lobe_sum[k] += irradiance * std::exp(lobes.exponent[k] * std::log(hn));
          }
        }
      }
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        double v = 0.0;
        for (std::size_t k = 0; k < lobes.count; ++k) v += scene.material.strength(k, c) * lobe_sum[k];
        out.at(x, y, c) = std::min(v, 1.0);
      }
    }
  }
  return out;
}

PhysicalParams render_backward(const PhysicalScene& scene, const Image& upstream) {
  scene.validate();
  const std::size_t W = scene.width(), H = scene.height();
  if (upstream.width() != W || upstream.height() != H) {
    throw std::invalid_argument("render_backward: upstream shape does not match the image");
  }
  const auto texels = texel_table(scene.light.width(), scene.light.height());
  const LobeCache lobes = lobe_cache(scene.material);
  const Material& m = scene.material;
  const Tensor& L = scene.light.radiance;

  PhysicalParams grad = PhysicalParams::zeros_like(scene);
  std::vector<double> lobe_sum(lobes.count), log_sum(lobes.count);

  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!scene.masked(x, y)) continue;
      const double phi = scene.normals.azimuth(x, y);
      const double theta = scene.normals.polar(x, y);
      const Vec3 n = angles_to_normal(phi, theta);

      // First pass: unclamped channel values to find saturated channels.
      std::fill(lobe_sum.begin(), lobe_sum.end(), 0.0);
      std::fill(log_sum.begin(), log_sum.end(), 0.0);
      for (std::size_t t = 0; t < texels.size(); ++t) {
        const double cosine = dot(n, texels[t].dir);
        if (cosine <= 0.0) continue;
        const double irradiance = L[t] * texels[t].weight * cosine;
        const double hn = dot(texels[t].half, n);
        for (std::size_t k = 0; k < lobes.count; ++k) {
          if (!lobes.specular[k]) {
            lobe_sum[k] += irradiance;
          } else if (hn > 0.0) {
            const double lh = std::log(hn);
            const double p = std::exp(lobes.exponent[k] * lh);
            lobe_sum[k] += irradiance * p;
            log_sum[k] += irradiance * p * lh * lobes.exponent[k];
          }
        }
      }
      double up[Image::kChannels];
      bool any = false;
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        double v = 0.0;
        for (std::size_t k = 0; k < lobes.count; ++k) v += m.strength(k, c) * lobe_sum[k];
        up[c] = v < 1.0 ? upstream.at(x, y, c) : 0.0;
        any = any || up[c] != 0.0;
      }
      if (!any) continue;

      // q_k = sum_c up_c s_{k,c}
      double q[8] = {};
      for (std::size_t k = 0; k < lobes.count; ++k) {
        for (std::size_t c = 0; c < Image::kChannels; ++c) {
          grad.material[k * kLobeParams + c] += up[c] * lobe_sum[k];
          q[k] += up[c] * m.strength(k, c);
        }
        if (lobes.specular[k]) grad.material[k * kLobeParams + 3] += q[k] * log_sum[k];
      }

      Vec3 dn{};
      for (std::size_t t = 0; t < texels.size(); ++t) {
        const double cosine = dot(n, texels[t].dir);
        if (cosine <= 0.0) continue;
        const double hn = dot(texels[t].half, n);
        double f = 0.0;   // sum_k q_k lobe_k
        double df = 0.0;  // sum_k q_k d lobe_k / d(h.n)
        for (std::size_t k = 0; k < lobes.count; ++k) {
          if (!lobes.specular[k]) {
            f += q[k];
          } else if (hn > 0.0) {
            const double a = lobes.exponent[k];
            const double p = std::exp(a * std::log(hn));
            f += q[k] * p;
            df += q[k] * a * p / hn;
          }
        }
        const double lw = L[t] * texels[t].weight;
        grad.light[t] += texels[t].weight * cosine * f;
        dn += (lw * f) * texels[t].dir + (lw * cosine * df) * texels[t].half;
      }
      const double sp = std::sin(phi), cp = std::cos(phi);
      const double st = std::sin(theta), ct = std::cos(theta);
      const Vec3 dn_dphi{-st * sp, st * cp, 0.0};
      const Vec3 dn_dtheta{ct * cp, ct * sp, -st};
      grad.normals[(y * W + x) * 2] += dot(dn, dn_dphi);
      grad.normals[(y * W + x) * 2 + 1] += dot(dn, dn_dtheta);
    }
  }
  return grad;
}

void enforce_invariants(PhysicalScene& scene) {
  Tensor& a = scene.normals.angles;
  for (std::size_t i = 0; i < a.size(); i += 2) {
    a[i] = wrap_angle(a[i]);
    a[i + 1] = std::clamp(a[i + 1], kPolarMin, kPi - kPolarMin);
  }
  for (double& v : scene.light.radiance.data()) v = std::max(v, 0.0);
  Tensor& p = scene.material.params;
  for (std::size_t k = 0; k < scene.material.lobes(); ++k) {
    for (std::size_t c = 0; c < 3; ++c) p[k * kLobeParams + c] = std::max(p[k * kLobeParams + c], 0.0);
    double& la = p[k * kLobeParams + 3];
    la = std::clamp(la, kLogExponentMin, kLogExponentMax);
  }
}

PhysicalScene apply_delta(const PhysicalScene& base, const PhysicalParams& delta) {
  PhysicalScene out = base;
  out.normals.angles += delta.normals;
  out.light.radiance += delta.light;
  out.material.params += delta.material;
  enforce_invariants(out);
  return out;
}

PhysicalParams difference(const PhysicalScene& x, const PhysicalScene& base) {
  PhysicalParams d{x.normals.angles - base.normals.angles, x.light.radiance - base.light.radiance,
                   x.material.params - base.material.params};
  for (std::size_t i = 0; i < d.normals.size(); i += 2) {
    double a = d.normals[i];
    if (a > kPi) a -= kTwoPi;
    if (a <= -kPi) a += kTwoPi;
    d.normals[i] = a;
  }
  return d;
}

std::vector<std::uint8_t> kink_pattern(const PhysicalScene& scene) {
  const auto texels = texel_table(scene.light.width(), scene.light.height());
  const Image img = render(scene);
  std::vector<std::uint8_t> pattern;
  for (std::size_t y = 0; y < scene.height(); ++y) {
    for (std::size_t x = 0; x < scene.width(); ++x) {
      if (!scene.masked(x, y)) continue;
      const Vec3 n = angles_to_normal(scene.normals.azimuth(x, y), scene.normals.polar(x, y));
      for (const Texel& t : texels) {
        pattern.push_back(dot(n, t.dir) > 0.0);
        pattern.push_back(dot(t.half, n) > 0.0);
      }
      for (std::size_t c = 0; c < 3; ++c) pattern.push_back(img.at(x, y, c) < 1.0);
    }
  }
  return pattern;
}

PhysicalScene random_scene(std::size_t width, std::size_t height, std::size_t light_width,
                           std::size_t light_height, std::uint64_t seed) {
  Rng rng(seed);
  PhysicalScene s;
  s.normals = NormalMap(width, height);
  s.mask = Tensor({height, width});
  const double cx = (width - 1) / 2.0 + rng.uniform(-0.5, 0.5);
  const double cy = (height - 1) / 2.0 + rng.uniform(-0.5, 0.5);
  const double rx = width * rng.uniform(0.38, 0.5), ry = height * rng.uniform(0.38, 0.5);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      s.mask[y * width + x] = (dx * dx + dy * dy <= 1.0) ? 1.0 : 0.0;
      s.normals.set(x, y, rng.uniform(0.0, kTwoPi), rng.uniform(0.05, 1.35));
    }
  }

  s.light = EnvironmentLight(light_width, light_height);
  const double base = rng.uniform(0.03, 0.1);
  const int blobs = 1 + static_cast<int>(rng.index(2));
  std::vector<Vec3> centers;
  std::vector<double> gains, widths;
  for (int b = 0; b < blobs; ++b) {
    centers.push_back(angles_to_normal(rng.uniform(0.0, kTwoPi), rng.uniform(0.1, 1.4)));
    gains.push_back(rng.uniform(0.3, 1.2));
    widths.push_back(rng.uniform(0.25, 0.6));
  }
  for (std::size_t i = 0; i < light_height; ++i) {
    for (std::size_t j = 0; j < light_width; ++j) {
      const Vec3 d = light_direction(i, j, light_width, light_height);
      double v = base * rng.uniform(0.5, 1.5);
      for (int b = 0; b < blobs; ++b) {
        const double ang = std::acos(std::clamp(dot(d, centers[b]), -1.0, 1.0));
        v += gains[b] * std::exp(-0.5 * (ang / widths[b]) * (ang / widths[b]));
      }
      s.light.radiance[i * light_width + j] = v;
    }
  }

  Tensor mat({2, kLobeParams});
  for (std::size_t c = 0; c < 3; ++c) {
    mat[c] = rng.uniform(0.1, 0.35);
    mat[kLobeParams + c] = rng.uniform(0.05, 0.25);
  }
  mat[3] = 0.0;
  mat[kLobeParams + 3] = std::log(rng.uniform(3.0, 30.0));
  s.material = Material(std::move(mat), {LobeKind::kDiffuse, LobeKind::kSpecular});
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path sibling(const std::filesystem::path& path, const std::string& section) {
  return path.parent_path() / (path.stem().string() + "." + section + ".patd");
}

}  // namespace

void save_scene(const std::filesystem::path& path, const PhysicalScene& scene) {
  scene.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "[normals]\nwidth = " << scene.width() << "\nheight = " << scene.height()
      << "\nfile = " << sibling(path, "normals").filename().string() << "\n\n";
  out << "[light]\nwidth = " << scene.light.width() << "\nheight = " << scene.light.height()
      << "\nfile = " << sibling(path, "light").filename().string() << "\n\n";
  out << "[material]\nlobes = " << scene.material.lobes() << "\nkinds =";
  for (LobeKind k : scene.material.kinds) out << (k == LobeKind::kDiffuse ? " diffuse" : " specular");
  out << "\nfile = " << sibling(path, "material").filename().string() << "\n\n";
  out << "[mask]\nfile = " << sibling(path, "mask").filename().string() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
  numkit::save_patd(sibling(path, "normals"), scene.normals.angles);
  numkit::save_patd(sibling(path, "light"), scene.light.radiance);
  numkit::save_patd(sibling(path, "material"), scene.material.params);
  numkit::save_patd(sibling(path, "mask"), scene.mask);
}

PhysicalScene load_scene(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error("cannot parse scene file " + path.string() + ": " + e.what());
  }
  const auto dir = path.parent_path();
  auto payload = [&](const char* section) {
    return numkit::load_patd(dir / tree.get<std::string>(std::string(section) + ".file"));
  };

  PhysicalScene s;
  s.normals = NormalMap(payload("normals"));
  s.light = EnvironmentLight(payload("light"));
  std::vector<LobeKind> kinds;
  std::istringstream ks(tree.get<std::string>("material.kinds"));
  for (std::string k; ks >> k;) {
    if (k == "diffuse") kinds.push_back(LobeKind::kDiffuse);
    else if (k == "specular") kinds.push_back(LobeKind::kSpecular);
    else throw std::runtime_error("scene file: unknown lobe kind '" + k + "'");
  }
  s.material = Material(payload("material"), std::move(kinds));
  s.mask = payload("mask");
  if (s.width() != tree.get<std::size_t>("normals.width") ||
      s.height() != tree.get<std::size_t>("normals.height")) {
    throw std::runtime_error("scene file: normal map dimensions disagree with payload");
  }
  s.validate();
  return s;
}

}  // namespace physadv::diffrender
