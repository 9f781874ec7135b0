#include "physadv/interpret.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "physadv/numkit.hpp"

namespace physadv::interpret {

std::string_view optimizer_name(Optimizer opt) { return opt == Optimizer::kAdam ? "adam" : "sgd"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::kAdam;
  if (name == "sgd") return Optimizer::kSgdMomentum;
  throw std::invalid_argument(fmt::format("unknown optimizer '{}'", name));
}

void ReconstructConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("reconstruct config: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("reconstruct config: momentum must be in [0, 1)");
}

std::vector<ReconstructConfig> reconstruction_grid(std::size_t max_iterations) {
  std::vector<ReconstructConfig> grid;
  for (Optimizer opt : {Optimizer::kSgdMomentum, Optimizer::kAdam}) {
    for (double lr : {1e-3, 1e-4, 1e-5}) {
      ReconstructConfig cfg;
      cfg.optimizer = opt;
      cfg.learning_rate = lr;
      cfg.max_iterations = max_iterations;
      grid.push_back(cfg);
    }
  }
  return grid;
}

std::string_view outcome_name(LabelOutcome outcome) {
  switch (outcome) {
    case LabelOutcome::kRevertedToTrue: return "reverted_to_true";
    case LabelOutcome::kKeptAdversarial: return "kept_adversarial";
    case LabelOutcome::kOther: return "other";
  }
  return "unknown";
}

double l1_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("l1_distance: shape mismatch");
  return numkit::sum_abs((a - b).tensor());
}

Fit fit_physical(const diffrender::PhysicalScene& x0, const Image& target, const ReconstructConfig& cfg) {
  cfg.validate();
  x0.validate();
  Fit fit{x0, {}, diffrender::render(x0), {}};
  if (!fit.rerendered.same_shape(target)) {
    throw std::invalid_argument(fmt::format("reconstruct: target is {}x{}, render is {}x{}", target.width(),
                                            target.height(), fit.rerendered.width(), fit.rerendered.height()));
  }
  const std::size_t dims = diffrender::PhysicalParams::zeros_like(x0).size();
  numkit::AdamState adam = numkit::AdamState::for_shape({dims});
  Tensor velocity({dims});
  const Tensor no_decay({dims});
  fit.loss_curve.push_back(l1_distance(target, fit.rerendered));
  for (std::size_t t = 0; t < cfg.max_iterations; ++t) {
    // d|Y* - r|/dr = sign(r - Y*).
    Image upstream(target.width(), target.height());
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      const double r = fit.rerendered[i] - target[i];
      upstream[i] = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    }
    const Tensor grad = diffrender::render_backward(fit.scene, upstream).flatten();
    const Tensor step = cfg.optimizer == Optimizer::kAdam
                            ? numkit::adam_step(adam, grad, cfg.learning_rate)
                            : numkit::sgd_momentum_step(velocity, grad, no_decay, cfg.learning_rate, cfg.momentum, 0.0);
    fit.scene = diffrender::apply_delta(fit.scene, diffrender::PhysicalParams::unflatten(step, fit.scene));
    fit.rerendered = diffrender::render(fit.scene);
    fit.loss_curve.push_back(l1_distance(target, fit.rerendered));
  }
  fit.delta_x = diffrender::difference(fit.scene, x0).flatten();
  return fit;
}

LabelOutcome classify_outcome(std::size_t prediction, std::size_t true_class, std::size_t adversarial_class) {
  if (prediction == true_class) return LabelOutcome::kRevertedToTrue;
  if (prediction == adversarial_class) return LabelOutcome::kKeptAdversarial;
  return LabelOutcome::kOther;
}

ReconstructionResult reconstruct_physical(const diffrender::PhysicalScene& x0, const Image& y_adv,
                                          const ReconstructConfig& cfg, const cnn::ClassifierParams& params,
                                          std::size_t true_class, std::size_t adversarial_class) {
  Fit fit = fit_physical(x0, y_adv, cfg);
  ReconstructionResult r;
  r.config = cfg;
  r.delta_x = std::move(fit.delta_x);
  r.loss_curve = std::move(fit.loss_curve);
  r.final_l1 = r.loss_curve.back();
  r.rerender_prediction = cnn::forward(fit.rerendered, params).argmax();
  r.rerendered = std::move(fit.rerendered);
  r.outcome = classify_outcome(r.rerender_prediction, true_class, adversarial_class);
  return r;
}

std::vector<ReconstructionResult> reconstruct_grid(const diffrender::PhysicalScene& x0, const Image& y_adv,
                                                   const std::vector<ReconstructConfig>& grid,
                                                   const cnn::ClassifierParams& params, std::size_t true_class,
                                                   std::size_t adversarial_class) {
  std::vector<ReconstructionResult> out;
  for (const ReconstructConfig& cfg : grid) {
    out.push_back(reconstruct_physical(x0, y_adv, cfg, params, true_class, adversarial_class));
  }
  return out;
}

std::size_t best_index(const std::vector<ReconstructionResult>& results) {
  if (results.empty()) throw std::invalid_argument("best_index: no results");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].final_l1 < results[best].final_l1) best = i;
  }
  return best;
}

std::size_t rerender_defense(const diffrender::PhysicalScene& x0, const Image& y_adv,
                             const cnn::ClassifierParams& params, const ReconstructConfig& cfg) {
  return cnn::forward(fit_physical(x0, y_adv, cfg).rerendered, params).argmax();
}

}  // namespace physadv::interpret
