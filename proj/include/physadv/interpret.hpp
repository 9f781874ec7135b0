#pragma once

// Physical explanations of image-space perturbations: fit dX so that
// r(X0 + dX) matches a target image in l1, then classify the re-render.

#include <cstdint>
#include <string_view>
#include <vector>

#include "physadv/cnn.hpp"
#include "physadv/image.hpp"
#include "physadv/render_diff.hpp"

namespace physadv::interpret {

using numkit::Tensor;

enum class Optimizer : std::uint8_t { kSgdMomentum, kAdam };

std::string_view optimizer_name(Optimizer opt);
Optimizer parse_optimizer(std::string_view name);

struct ReconstructConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-4;
  std::size_t max_iterations = 500;
  double momentum = 0.9;  // SGD only

  void validate() const;
};

// {SGD, Adam} x {1e-3, 1e-4, 1e-5}, SGD first, learning rates descending.
std::vector<ReconstructConfig> reconstruction_grid(std::size_t max_iterations = 500);

enum class LabelOutcome : std::uint8_t { kRevertedToTrue, kKeptAdversarial, kOther };

std::string_view outcome_name(LabelOutcome outcome);

struct Fit {
  diffrender::PhysicalScene scene;  // X0 + dX
  Tensor delta_x;                   // PhysicalParams::flatten() of dX
  Image rerendered;
  // Entry t is the loss after t updates; max_iterations + 1 entries.
  std::vector<double> loss_curve;
};

double l1_distance(const Image& a, const Image& b);

// Subgradient descent on ||Y_target - r(X0 + dX)||_1 over normals, light and
// material jointly. The subgradient of |0| is 0.
Fit fit_physical(const diffrender::PhysicalScene& x0, const Image& target, const ReconstructConfig& cfg);

struct ReconstructionResult {
  ReconstructConfig config;
  Tensor delta_x;
  std::vector<double> loss_curve;
  double final_l1 = 0.0;
  Image rerendered;
  std::size_t rerender_prediction = 0;
  LabelOutcome outcome = LabelOutcome::kOther;
};

LabelOutcome classify_outcome(std::size_t prediction, std::size_t true_class, std::size_t adversarial_class);

ReconstructionResult reconstruct_physical(const diffrender::PhysicalScene& x0, const Image& y_adv,
                                          const ReconstructConfig& cfg, const cnn::ClassifierParams& params,
                                          std::size_t true_class, std::size_t adversarial_class);

// Runs every config and returns all results in grid order.
std::vector<ReconstructionResult> reconstruct_grid(const diffrender::PhysicalScene& x0, const Image& y_adv,
                                                   const std::vector<ReconstructConfig>& grid,
                                                   const cnn::ClassifierParams& params, std::size_t true_class,
                                                   std::size_t adversarial_class);

// Index of the lowest final l1; earliest wins ties.
std::size_t best_index(const std::vector<ReconstructionResult>& results);

// Prediction on the re-render of the fitted physical explanation.
std::size_t rerender_defense(const diffrender::PhysicalScene& x0, const Image& y_adv,
                             const cnn::ClassifierParams& params, const ReconstructConfig& cfg = {});

}  // namespace physadv::interpret
