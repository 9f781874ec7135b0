#include "physadv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "physadv/numkit.hpp"
#include "physadv/rng.hpp"

namespace physadv::attack {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_target(std::size_t target, std::size_t classes) {
  if (target >= classes) {
    throw std::invalid_argument(fmt::format("attack: class {} out of range for {} classes", target, classes));
  }
}

std::vector<double> one_hot(std::size_t target, std::size_t classes) {
  std::vector<double> u(classes, 0.0);
  u[target] = 1.0;
  return u;
}

// Appends the iteration record shared by every attack.
void record(AttackResult& r, const cnn::Posterior& z, std::size_t truncated, const Image& y, const Image& y0,
            const Observer& observe) {
  if (observe) observe(r.confidence_trace.size(), y);
  r.confidence_trace.push_back(z[r.true_class]);
  r.truncation_trace.push_back(truncated);
  r.log_advantage_trace.push_back(log_advantage(z, r.true_class));
  r.distance_trace.push_back(std::sqrt(numkit::sum_squares((y - y0).tensor())));
  r.final_prediction = z.argmax();
  r.success = r.final_prediction != r.true_class;
}

void finish(AttackResult& r, Tensor delta_x, Image delta_y) {
  r.iterations_used = r.confidence_trace.size() - 1;
  r.delta_x = std::move(delta_x);
  r.delta_y = std::move(delta_y);
  r.perceptibility = numkit::perceptibility_image(r.delta_y).value;
}

Tensor flat(const Tensor& t) { return t.reshaped({t.size()}); }

void step_signed(Tensor& values, const Tensor& grad, double eta) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= eta * sign(grad[i]);
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kImageFgsm: return "image_fgsm";
    case Mode::kPhysicalFgsm: return "physical_fgsm";
    case Mode::kZoo: return "zoo";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::kImageFgsm, Mode::kPhysicalFgsm, Mode::kZoo}) {
    if (mode_name(m) == name) return m;
  }
  throw std::invalid_argument(fmt::format("unknown attack mode '{}'", name));
}

AttackConfig AttackConfig::defaults(Mode mode) {
  AttackConfig cfg;
  cfg.mode = mode;
  if (mode == Mode::kZoo) {
    cfg.eta = 2e-3;
    cfg.max_iterations = 500;
  }
  return cfg;
}

void AttackConfig::validate(std::size_t dims) const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("attack config: " + what); };
  if (!(eta > 0.0)) fail("eta must be > 0");
  if (!(physical_eta.normals > 0.0 && physical_eta.light > 0.0 && physical_eta.material > 0.0)) {
    fail("physical step sizes must be > 0");
  }
  if (max_iterations < 1) fail("max_iterations must be >= 1");
  if (!(truncation > 0.0 && truncation <= 1.0)) fail("truncation threshold must lie in (0, 1]");
  if (!(delta > 0.0)) fail("delta must be > 0");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (coord_batch < 1 || coord_batch > dims) fail(fmt::format("coord_batch must lie in [1, {}]", dims));
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    fail("invalid Adam hyperparameters");
  }
}

double loss_nontargeted(const cnn::Posterior& z, std::size_t target) {
  require_target(target, z.classes());
  return z[target];
}

double log_advantage(const cnn::Posterior& z, std::size_t target) {
  require_target(target, z.classes());
  double rival = 0.0;
  for (std::size_t k = 0; k < z.classes(); ++k) {
    if (k != target) rival = std::max(rival, z[k]);
  }
  // Floored so saturated posteriors stay finite.
  constexpr double kFloor = std::numeric_limits<double>::min();
  return std::log(std::max(z[target], kFloor)) - std::log(std::max(rival, kFloor));
}

Truncation truncate_image(const Image& y, const Image& y0, double threshold) {
  if (!y.same_shape(y0)) throw std::invalid_argument("truncate_image: shape mismatch");
  Truncation t{y, 0, std::vector<std::uint8_t>(y.size(), 0)};
  for (std::size_t p = 0; p < y.pixel_count(); ++p) {
    bool any = false;
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      const std::size_t i = p * Image::kChannels + c;
      const double lo = std::max(0.0, y0[i] - threshold), hi = std::min(1.0, y0[i] + threshold);
      const double v = std::clamp(y[i], lo, hi);
      if (v != y[i]) {
        t.clipped[i] = 1;
        any = true;
      }
      t.image[i] = v;
    }
    if (any) ++t.truncated_pixels;
  }
  return t;
}

AttackResult fgsm_attack_image(const Image& y0, std::size_t target, const cnn::ClassifierParams& params,
                               const AttackConfig& cfg, const Observer& observe) {
  cfg.validate(y0.size());
  require_target(target, params.classes());
  AttackResult r;
  r.true_class = target;
  cnn::ForwardCache cache;
  Image y = y0;
  record(r, cnn::forward(y, params, &cache), 0, y, y0, observe);
  r.applicable = !r.success;
  const std::vector<double> upstream = one_hot(target, params.classes());
  for (std::size_t t = 1; r.applicable && !r.success && t <= cfg.max_iterations; ++t) {
    const Image grad = cnn::backward_input(y, params, upstream, cache);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= cfg.eta * sign(grad[i]);
    Truncation tr = truncate_image(y, y0, cfg.truncation);
    y = std::move(tr.image);
    record(r, cnn::forward(y, params, &cache), tr.truncated_pixels, y, y0, observe);
  }
  Image dy = y - y0;
  finish(r, flat(dy.tensor()), std::move(dy));
  return r;
}

AttackResult fgsm_attack_physical(const diffrender::PhysicalScene& x0, std::size_t target,
                                  const cnn::ClassifierParams& params, const AttackConfig& cfg,
                                  PhysicalSubset subset, const Observer& observe) {
  if (subset.empty()) throw std::invalid_argument("fgsm_attack_physical: empty parameter subset");
  x0.validate();
  require_target(target, params.classes());
  const Image y0 = diffrender::render(x0);
  cfg.validate(y0.size());
  AttackResult r;
  r.true_class = target;
  cnn::ForwardCache cache;
  Image y_in = y0;
  std::vector<std::uint8_t> clipped(y0.size(), 0);
  record(r, cnn::forward(y_in, params, &cache), 0, y_in, y0, observe);
  r.applicable = !r.success;
  const std::vector<double> upstream = one_hot(target, params.classes());
  diffrender::PhysicalScene x = x0;
  for (std::size_t t = 1; r.applicable && !r.success && t <= cfg.max_iterations; ++t) {
    Image gy = cnn::backward_input(y_in, params, upstream, cache);
    // Truncated channels are locally constant in X.
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (clipped[i]) gy[i] = 0.0;
    }
    const diffrender::PhysicalParams g = diffrender::render_backward(x, gy);
    if (subset.normals) step_signed(x.normals.angles, g.normals, cfg.physical_eta.normals);
    if (subset.light) step_signed(x.light.radiance, g.light, cfg.physical_eta.light);
    if (subset.material) step_signed(x.material.params, g.material, cfg.physical_eta.material);
    diffrender::enforce_invariants(x);
    Truncation tr = truncate_image(diffrender::render(x), y0, cfg.truncation);
    y_in = std::move(tr.image);
    clipped = std::move(tr.clipped);
    record(r, cnn::forward(y_in, params, &cache), tr.truncated_pixels, y_in, y0, observe);
  }
  const diffrender::PhysicalParams dx = diffrender::difference(x, x0);
  Image dy = diffrender::render(diffrender::apply_delta(x0, dx)) - y0;
  finish(r, dx.flatten(), std::move(dy));
  return r;
}

double zoo_coordinate_derivative(const std::function<double(const Tensor&)>& objective,
                                 const std::function<Tensor(const Tensor&)>& project,
                                 const Tensor& x, std::size_t d, double delta) {
  if (d >= x.size()) throw std::invalid_argument("zoo_coordinate_derivative: coordinate out of range");
  Tensor plus = x, minus = x;
  plus[d] += delta;
  minus[d] -= delta;
  if (project) {
    plus = project(plus);
    minus = project(minus);
  }
  const double fp = objective(plus), fm = objective(minus);
  const double span = plus[d] - minus[d];
  if (!(span > 0.0)) return 0.0;
  return (fp - fm) / span;
}

AttackResult zoo_attack(const Tensor& x0, std::size_t target, const BlackBox& box, const AttackConfig& cfg,
                        const Observer& observe) {
  if (!box.render || !box.classify) throw std::invalid_argument("zoo_attack: black box needs render and classify");
  cfg.validate(x0.size());
  AttackResult r;
  r.true_class = target;
  auto render = [&](const Tensor& x) {
    ++r.renders;
    return box.render(x);
  };
  const Image y0 = render(x0);
  cnn::Posterior z = box.classify(y0);
  require_target(target, z.classes());
  record(r, z, 0, y0, y0, observe);
  r.applicable = !r.success;

  auto objective = [&](const Tensor& x) {
    const Image y = render(x);
    const double conf = box.classify(y)[target];
    return cfg.lambda == 0.0 ? conf : conf + cfg.lambda * numkit::sum_squares((y - y0).tensor());
  };
  Tensor x = x0;
  Image y = y0;
  const std::size_t dims = x0.size();
  std::vector<double> m(dims, 0.0), v(dims, 0.0);
  std::vector<std::int64_t> steps(dims, 0);
  Rng rng(derive_seed(cfg.seed, "zoo"));
  std::vector<double> grads(cfg.coord_batch);
  for (std::size_t t = 1; r.applicable && !r.success && t <= cfg.max_iterations; ++t) {
    const std::vector<std::size_t> coords = rng.sample_distinct(dims, cfg.coord_batch);
    for (std::size_t k = 0; k < coords.size(); ++k) {
      grads[k] = zoo_coordinate_derivative(objective, box.project, x, coords[k], cfg.delta);
    }
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const std::size_t d = coords[k];
      const double g = grads[k];
      m[d] = cfg.adam_beta1 * m[d] + (1.0 - cfg.adam_beta1) * g;
      v[d] = cfg.adam_beta2 * v[d] + (1.0 - cfg.adam_beta2) * g * g;
      ++steps[d];
      const double mh = m[d] / (1.0 - std::pow(cfg.adam_beta1, static_cast<double>(steps[d])));
      const double vh = v[d] / (1.0 - std::pow(cfg.adam_beta2, static_cast<double>(steps[d])));
      x[d] -= cfg.eta * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
    if (box.project) x = box.project(x);
    y = render(x);
    record(r, box.classify(y), 0, y, y0, observe);
  }
  finish(r, x - x0, y - y0);
  return r;
}

AttackResult zoo_attack_scene(const scene::BlackBoxScene& x0, std::size_t target,
                              const cnn::ClassifierParams& params, const AttackConfig& cfg,
                              const Observer& observe) {
  const scene::ShapeClass shape = x0.shape;
  auto to_scene = [shape](const Tensor& v) {
    scene::SceneVector a{};
    std::copy(v.data().begin(), v.data().end(), a.begin());
    return scene::BlackBoxScene::from_vector(shape, a);
  };
  auto to_tensor = [](const scene::BlackBoxScene& s) {
    const scene::SceneVector a = s.to_vector();
    return Tensor({scene::kSceneDims}, std::vector<double>(a.begin(), a.end()));
  };
  BlackBox box;
  box.render = [&](const Tensor& v) { return scene::render_scene(to_scene(v)); };
  box.classify = [&](const Image& y) { return cnn::forward(y, params); };
  box.project = [&](const Tensor& v) {
    scene::BlackBoxScene s = to_scene(v);
    scene::enforce_invariants(s);
    return to_tensor(s);
  };
  return zoo_attack(to_tensor(x0), target, box, cfg, observe);
}

SuccessSummary attack_success_summary(const std::vector<AttackResult>& results) {
  if (results.empty()) throw std::invalid_argument("attack_success_summary: no results");
  SuccessSummary s;
  double p_sum = 0.0;
  for (const AttackResult& r : results) {
    if (!r.applicable) continue;
    ++s.applicable;
    if (r.success) {
      ++s.successes;
      p_sum += r.perceptibility;
    }
  }
  if (s.applicable > 0) s.success_rate = 100.0 * static_cast<double>(s.successes) / static_cast<double>(s.applicable);
  if (s.successes > 0) s.mean_perceptibility = p_sum / static_cast<double>(s.successes);
  return s;
}

void save_result(const std::filesystem::path& dir, const AttackResult& result, const Image& clean) {
  if (!clean.same_shape(result.delta_y)) throw std::invalid_argument("save_result: clean image shape mismatch");
  std::filesystem::create_directories(dir);
  numkit::save_patd(dir / "delta_x.patd", result.delta_x);
  numkit::save_patd(dir / "delta_y.patd", result.delta_y.tensor());

  std::ofstream trace(dir / "trace.csv"), curves(dir / "curves.csv");
  if (!trace || !curves) throw std::runtime_error("cannot write attack traces in " + dir.string());
  trace << "iter,conf,trunc_count\n";
  curves << "iter,log_advantage,distance\n";
  for (std::size_t t = 0; t < result.confidence_trace.size(); ++t) {
    trace << fmt::format("{},{},{}\n", t, result.confidence_trace[t], result.truncation_trace[t]);
    curves << fmt::format("{},{},{}\n", t, result.log_advantage_trace[t], result.distance_trace[t]);
  }

  boost::property_tree::ptree info;
  info.put("applicable", result.applicable ? 1 : 0);
  info.put("success", result.success ? 1 : 0);
  info.put("iterations_used", result.iterations_used);
  info.put("perceptibility", fmt::format("{}", result.perceptibility));
  info.put("true_class", result.true_class);
  info.put("final_prediction", result.final_prediction);
  info.put("renders", result.renders);
  boost::property_tree::write_ini((dir / "result.txt").string(), info);

  save_ppm(dir / "before.ppm", clean);
  save_ppm(dir / "after.ppm", Image(clean.tensor() + result.delta_y.tensor()));
  save_ppm(dir / "perturbation.ppm", visualize_perturbation(result.delta_y));
}

AttackResult load_result(const std::filesystem::path& dir) {
  boost::property_tree::ptree info;
  try {
    boost::property_tree::read_ini((dir / "result.txt").string(), info);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error(fmt::format("cannot read attack result in {}: {}", dir.string(), e.what()));
  }
  AttackResult r;
  r.applicable = info.get<int>("applicable") != 0;
  r.success = info.get<int>("success") != 0;
  r.iterations_used = info.get<std::size_t>("iterations_used");
  r.perceptibility = std::stod(info.get<std::string>("perceptibility"));
  r.true_class = info.get<std::size_t>("true_class");
  r.final_prediction = info.get<std::size_t>("final_prediction");
  r.renders = info.get<std::size_t>("renders");
  r.delta_x = numkit::load_patd(dir / "delta_x.patd");
  r.delta_y = Image(numkit::load_patd(dir / "delta_y.patd"));

  auto read_rows = [&](const char* name, auto&& on_row) {
    std::ifstream in(dir / name);
    if (!in) throw std::runtime_error(fmt::format("cannot read {} in {}", name, dir.string()));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b, c;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
        throw std::runtime_error(fmt::format("malformed row in {}: {}", name, line));
      }
      on_row(b, c);
    }
  };
  read_rows("trace.csv", [&](const std::string& conf, const std::string& trunc) {
    r.confidence_trace.push_back(std::stod(conf));
    r.truncation_trace.push_back(std::stoull(trunc));
  });
  read_rows("curves.csv", [&](const std::string& adv, const std::string& dist) {
    r.log_advantage_trace.push_back(std::stod(adv));
    r.distance_trace.push_back(std::stod(dist));
  });
  if (r.confidence_trace.size() != r.iterations_used + 1 || r.log_advantage_trace.size() != r.iterations_used + 1) {
    throw std::runtime_error("attack result traces disagree with iterations_used in " + dir.string());
  }
  return r;
}

}  // namespace physadv::attack
