#pragma once

// Non-targeted attacks on Z = f(r(X)): iterative FGSM in image space,
// iterative FGSM in the physical space of the differentiable renderer with
// pixel truncation, and zeroth-order coordinate descent (ZOO) through a
// black-box renderer. All attacks minimize Z_{c'} and stop at the first
// misclassification.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physadv/cnn.hpp"
#include "physadv/image.hpp"
#include "physadv/render_diff.hpp"
#include "physadv/render_scene.hpp"
#include "physadv/tensor.hpp"

namespace physadv::attack {

using numkit::Tensor;

enum class Mode : std::uint8_t { kImageFgsm, kPhysicalFgsm, kZoo };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

// Physical parameter sets an attack may touch.
struct PhysicalSubset {
  bool normals = false;
  bool light = false;
  bool material = false;

  static PhysicalSubset all() { return {true, true, true}; }
  bool empty() const { return !normals && !light && !material; }
  friend bool operator==(const PhysicalSubset&, const PhysicalSubset&) = default;
};

// Per-set FGSM step sizes for physical attacks.
struct PhysicalSteps {
  double normals = 0.004;
  double light = 0.003;
  double material = 0.003;
};

inline constexpr double kDefaultTruncation = 18.0 / 255.0;

struct AttackConfig {
  Mode mode = Mode::kImageFgsm;
  double eta = 0.002;  // image FGSM step, or ZOO Adam learning rate
  PhysicalSteps physical_eta;
  std::size_t max_iterations = 120;
  double truncation = kDefaultTruncation;  // U, normalized intensity
  double delta = 1e-4;                     // ZOO probe half-width
  double lambda = 0.1;                     // ZOO penalty weight
  std::size_t coord_batch = 4;             // ZOO coordinates per iteration
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  // Defaults for each mode: FGSM T_max 120, ZOO eta 2e-3 and T_max 500.
  static AttackConfig defaults(Mode mode);
  // `dims` is the attacked dimensionality; coord_batch must lie in [1, dims].
  void validate(std::size_t dims) const;
};

struct AttackResult {
  // False when the classifier already mispredicts c' on the clean input.
  bool applicable = true;
  bool success = false;
  std::size_t iterations_used = 0;
  Tensor delta_x;  // flattened perturbation in the attacked space
  Image delta_y;   // r(X0 + dX) - r(X0)
  double perceptibility = 0.0;
  std::size_t true_class = 0;
  std::size_t final_prediction = 0;
  // One entry per iteration including iteration 0.
  std::vector<double> confidence_trace;     // Z_{c'}
  std::vector<std::size_t> truncation_trace;  // pixels with a clipped channel
  std::vector<double> log_advantage_trace;  // log Z_{c'} - max_{k != c'} log Z_k
  std::vector<double> distance_trace;       // ||dY||_2 of the classifier input
  std::size_t renders = 0;                  // renderer calls, ZOO only
};

double loss_nontargeted(const cnn::Posterior& z, std::size_t target);

// log Z_c - max_{k != c} log Z_k; positive while c is still predicted.
double log_advantage(const cnn::Posterior& z, std::size_t target);

struct Truncation {
  Image image;
  std::size_t truncated_pixels = 0;
  // Per channel value, 1 where the input was clipped.
  std::vector<std::uint8_t> clipped;
};

// Clips every channel into [Y0 - U, Y0 + U] intersected with [0, 1].
Truncation truncate_image(const Image& y, const Image& y0, double threshold);

// Called once per iteration, starting at 0, with the image the classifier saw.
using Observer = std::function<void(std::size_t iteration, const Image& classifier_input)>;

AttackResult fgsm_attack_image(const Image& y0, std::size_t target, const cnn::ClassifierParams& params,
                               const AttackConfig& cfg, const Observer& observe = {});

// dX is PhysicalParams::flatten() of the final difference to X0.
AttackResult fgsm_attack_physical(const diffrender::PhysicalScene& x0, std::size_t target,
                                  const cnn::ClassifierParams& params, const AttackConfig& cfg,
                                  PhysicalSubset subset, const Observer& observe = {});

// Black-box access for ZOO over a flat parameter vector.
struct BlackBox {
  std::function<Image(const Tensor&)> render;
  std::function<cnn::Posterior(const Image&)> classify;
  // Projects a parameter vector onto the valid set; identity when empty.
  std::function<Tensor(const Tensor&)> project;
};

// Symmetric difference of `objective` along coordinate d after projecting
// both probes, divided by the probe span that survived projection. Zero when
// projection collapses the probes onto each other.
double zoo_coordinate_derivative(const std::function<double(const Tensor&)>& objective,
                                 const std::function<Tensor(const Tensor&)>& project,
                                 const Tensor& x, std::size_t d, double delta);

// g(x) = Z_{c'}(f(r(x))) + lambda * ||r(x) - r(x0)||_2^2, minimized with
// per-coordinate Adam on coord_batch random coordinates per iteration.
// Every iteration makes exactly 2 * coord_batch + 1 render calls.
AttackResult zoo_attack(const Tensor& x0, std::size_t target, const BlackBox& box, const AttackConfig& cfg,
                        const Observer& observe = {});

// ZOO on the rasterizer; dX is the 14-dimensional scene vector difference.
AttackResult zoo_attack_scene(const scene::BlackBoxScene& x0, std::size_t target,
                              const cnn::ClassifierParams& params, const AttackConfig& cfg,
                              const Observer& observe = {});

struct SuccessSummary {
  std::size_t applicable = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;                    // percent over applicable results
  std::optional<double> mean_perceptibility;  // over successes only
};

SuccessSummary attack_success_summary(const std::vector<AttackResult>& results);

// Directory with delta_x.patd, delta_y.patd, trace.csv (iter,conf,trunc_count),
// curves.csv (iter,log_advantage,distance), result.txt and before/after/
// perturbation PPMs.
void save_result(const std::filesystem::path& dir, const AttackResult& result, const Image& clean);
AttackResult load_result(const std::filesystem::path& dir);

}  // namespace physadv::attack
