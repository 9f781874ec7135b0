#pragma once

// Fixed two-block convolutional classifier on 32x32 RGB input:
//   conv3x3(3->8) relu maxpool2 -> conv3x3(8->16) relu maxpool2 -> fc -> softmax
// with hand-written gradients for both the input and the parameters.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "physadv/image.hpp"
#include "physadv/tensor.hpp"

namespace physadv::cnn {

using numkit::Tensor;

inline constexpr std::size_t kInputSize = 32;
inline constexpr std::size_t kConv1Out = 8;
inline constexpr std::size_t kConv2Out = 16;
inline constexpr std::size_t kFcInputs = kConv2Out * 8 * 8;

struct ClassifierParams {
  Tensor conv1_w;  // (8, 3, 3, 3)
  Tensor conv1_b;  // (8)
  Tensor conv2_w;  // (16, 8, 3, 3)
  Tensor conv2_b;  // (16)
  Tensor fc_w;     // (K, 1024)
  Tensor fc_b;     // (K)

  static ClassifierParams zeros(std::size_t classes);
  // Weights ~ N(0, 2 / fan_in), biases zero.
  static ClassifierParams kaiming(std::size_t classes, std::uint64_t seed);

  std::size_t classes() const { return fc_b.size(); }
  std::size_t size() const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  // Throws unless shapes are consistent and every value is finite.
  void validate() const;
  std::uint64_t fingerprint() const;

  friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

inline constexpr std::size_t kParamTensors = 6;
extern const std::array<const char*, kParamTensors> kParamTensorNames;

struct Posterior {
  std::vector<double> probs;

  std::size_t classes() const { return probs.size(); }
  double operator[](std::size_t k) const { return probs[k]; }
  // Lowest index among the maximal entries.
  std::size_t argmax() const;
};

// Everything backward needs; tied to the (image, params) pair it came from.
struct ForwardCache {
  Tensor input;   // (3, 32, 32)
  Tensor pre1;    // (8, 32, 32)
  Tensor pool1;   // (8, 16, 16)
  std::vector<std::uint32_t> arg1;  // flat pre1 index of each pool1 winner
  Tensor pre2;    // (16, 16, 16)
  Tensor pool2;   // (16, 8, 8)
  std::vector<std::uint32_t> arg2;
  Tensor logits;  // (K)
  std::vector<double> probs;
  std::uint64_t params_fingerprint = 0;
  bool valid = false;
};

class StaleCache : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Posterior forward(const Image& image, const ClassifierParams& params, ForwardCache* cache = nullptr);

// Gradient of <upstream, Z> with respect to the input pixels.
Image backward_input(const Image& image, const ClassifierParams& params,
                     const std::vector<double>& upstream, const ForwardCache& cache);

struct ParamGradients {
  ClassifierParams grads;
  double loss = 0.0;  // cross entropy -log Z_label
};

// Cross-entropy gradient for one labeled image.
ParamGradients backward_params(const Image& image, const ClassifierParams& params,
                               std::size_t label, const ForwardCache& cache);

// One byte per relu decision and one per pool winner; equal patterns mean the
// network is smooth between two inputs.
std::vector<std::uint8_t> activation_pattern(const ForwardCache& cache);

struct LabeledImage {
  Image image;
  std::size_t label = 0;
};
using Dataset = std::vector<LabeledImage>;

// Mean cross-entropy gradient over a batch of indices into data.
ParamGradients batch_gradients(const Dataset& data, const std::vector<std::size_t>& indices,
                               const ClassifierParams& params);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Learning rate is multiplied by lr_decay after every epoch.
  double lr_decay = 0.93;
  std::uint64_t seed = 0;
};

struct TrainReport {
  ClassifierParams params;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_test_accuracy;  // empty when no test split
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Deterministic given config.seed. Test accuracy is 0 when test is empty.
TrainReport train(const Dataset& training, const Dataset& test, std::size_t classes,
                  const TrainConfig& config);

double evaluate(const Dataset& data, const ClassifierParams& params);

// Directory with one PATD file per tensor and a manifest.txt of key = value
// lines (classes, class names, shapes, accuracies).
struct CheckpointInfo {
  std::vector<std::string> class_names;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};
void save_checkpoint(const std::filesystem::path& dir, const ClassifierParams& params,
                     const CheckpointInfo& info);
ClassifierParams load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace physadv::cnn
