#include "physadv/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "physadv/numkit.hpp"
#include "physadv/rng.hpp"

namespace physadv::cnn {

const std::array<const char*, kParamTensors> kParamTensorNames = {"conv1_w", "conv1_b", "conv2_w",
                                                                  "conv2_b", "fc_w",    "fc_b"};

namespace {

constexpr std::size_t kPool1Size = kInputSize / 2;
constexpr std::size_t kPool2Size = kInputSize / 4;

std::vector<numkit::Shape> expected_shapes(std::size_t classes) {
  return {{kConv1Out, 3, 3, 3},         {kConv1Out}, {kConv2Out, kConv1Out, 3, 3}, {kConv2Out},
          {classes, kFcInputs}, {classes}};
}

// out[o] = b[o] + sum_i w[o,i] * in[i], 3x3 kernels, zero padding 1.
void conv3x3(const double* in, std::size_t cin, std::size_t s, const double* w, const double* b,
             std::size_t cout, double* out) {
  const std::size_t plane = s * s;
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = out + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
          const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? s - 1 : s;
          const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? s - 1 : s;
          for (std::size_t y = y0; y < y1; ++y) {
            const double* row = src + (y + ky - 1) * s + (kx - 1);
            double* orow = dst + y * s;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * row[x];
          }
        }
      }
    }
  }
}

// Accumulates input and weight gradients of conv3x3 given dout. Either
// output pointer may be null.
void conv3x3_backward(const double* in, std::size_t cin, std::size_t s, const double* w,
                      std::size_t cout, const double* dout, double* din, double* dw, double* db) {
  const std::size_t plane = s * s;
  for (std::size_t o = 0; o < cout; ++o) {
    const double* g = dout + o * plane;
    if (db) db[o] += std::accumulate(g, g + plane, 0.0);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      double* dsrc = din ? din + i * plane : nullptr;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
          const double wv = w[widx];
          const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? s - 1 : s;
          const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? s - 1 : s;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t off = (y + ky - 1) * s + (kx - 1);
            const double* grow = g + y * s;
            if (dw) {
              const double* row = src + off;
              for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * row[x];
            }
            if (dsrc) {
              double* drow = dsrc + off;
              for (std::size_t x = x0; x < x1; ++x) drow[x] += wv * grow[x];
            }
          }
          if (dw) dw[widx] += acc;
        }
      }
    }
  }
}

// 2x2 max pool of relu(pre); ties keep the first element in row-major order.
void relu_pool(const double* pre, std::size_t channels, std::size_t s, double* out,
               std::uint32_t* arg) {
  const std::size_t h = s / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < h; ++x) {
        std::size_t best = c * s * s + (2 * y) * s + 2 * x;
        double best_v = std::max(0.0, pre[best]);
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = c * s * s + (2 * y + dy) * s + 2 * x + dx;
            const double v = std::max(0.0, pre[idx]);
            if (v > best_v) {
              best_v = v;
              best = idx;
            }
          }
        }
        const std::size_t o = (c * h + y) * h + x;
        out[o] = best_v;
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

// Routes pooled gradients back to the winning pre-activations that were
// positive.
void relu_pool_backward(const double* pre, const std::uint32_t* arg, std::size_t pooled,
                        const double* dout, double* dpre) {
  for (std::size_t o = 0; o < pooled; ++o) {
    const std::uint32_t i = arg[o];
    if (pre[i] > 0.0) dpre[i] += dout[o];
  }
}

void softmax(const Tensor& logits, std::vector<double>& probs) {
  const std::size_t k = logits.size();
  probs.assign(k, 0.0);
  double mx = logits[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
}

void check_cache(const Image& image, const ClassifierParams& params, const ForwardCache& cache) {
  if (!cache.valid) throw StaleCache("backward: cache was never filled by forward");
  if (cache.params_fingerprint != params.fingerprint()) {
    throw StaleCache("backward: cache was computed with different parameters");
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < kInputSize; ++y) {
      for (std::size_t x = 0; x < kInputSize; ++x) {
        if (cache.input[(c * kInputSize + y) * kInputSize + x] != image.at(x, y, c)) {
          throw StaleCache("backward: cache was computed for a different image");
        }
      }
    }
  }
}

// Backpropagates dlogits. Writes parameter gradients when grads is non-null
// and the input gradient (CHW) when din is non-null.
void backward_core(const ClassifierParams& p, const ForwardCache& cache,
                   const std::vector<double>& dlogits, ClassifierParams* grads, Tensor* din) {
  const std::size_t k = p.classes();
  Tensor dpool2({kConv2Out, kPool2Size, kPool2Size});
  for (std::size_t c = 0; c < k; ++c) {
    const double g = dlogits[c];
    if (g == 0.0) continue;
    const double* wrow = p.fc_w.data().data() + c * kFcInputs;
    for (std::size_t j = 0; j < kFcInputs; ++j) dpool2[j] += g * wrow[j];
    if (grads) {
      grads->fc_b[c] += g;
      double* grow = grads->fc_w.data().data() + c * kFcInputs;
      for (std::size_t j = 0; j < kFcInputs; ++j) grow[j] += g * cache.pool2[j];
    }
  }

  Tensor dpre2({kConv2Out, kPool1Size, kPool1Size});
  relu_pool_backward(cache.pre2.data().data(), cache.arg2.data(), dpool2.size(), dpool2.data().data(),
                     dpre2.data().data());

  Tensor dpool1({kConv1Out, kPool1Size, kPool1Size});
  conv3x3_backward(cache.pool1.data().data(), kConv1Out, kPool1Size, p.conv2_w.data().data(), kConv2Out,
                   dpre2.data().data(), dpool1.data().data(),
                   grads ? grads->conv2_w.data().data() : nullptr,
                   grads ? grads->conv2_b.data().data() : nullptr);

  Tensor dpre1({kConv1Out, kInputSize, kInputSize});
  relu_pool_backward(cache.pre1.data().data(), cache.arg1.data(), dpool1.size(), dpool1.data().data(),
                     dpre1.data().data());

  conv3x3_backward(cache.input.data().data(), 3, kInputSize, p.conv1_w.data().data(), kConv1Out,
                   dpre1.data().data(), din ? din->data().data() : nullptr,
                   grads ? grads->conv1_w.data().data() : nullptr,
                   grads ? grads->conv1_b.data().data() : nullptr);
}

}  // namespace

ClassifierParams ClassifierParams::zeros(std::size_t classes) {
  if (classes < 2) throw std::invalid_argument("classifier needs at least two classes");
  const auto shapes = expected_shapes(classes);
  ClassifierParams p;
  auto ts = p.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) *ts[i] = Tensor(shapes[i]);
  return p;
}

ClassifierParams ClassifierParams::kaiming(std::size_t classes, std::uint64_t seed) {
  ClassifierParams p = zeros(classes);
  Rng rng(derive_seed(seed, "kaiming"));
  auto fill = [&](Tensor& w, std::size_t fan_in) {
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data()) v = scale * rng.normal();
  };
  fill(p.conv1_w, 3 * 9);
  fill(p.conv2_w, kConv1Out * 9);
  fill(p.fc_w, kFcInputs);
  return p;
}

std::size_t ClassifierParams::size() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> ClassifierParams::tensors() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w, &fc_b};
}

std::vector<const Tensor*> ClassifierParams::tensors() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w, &fc_b};
}

void ClassifierParams::validate() const {
  if (fc_b.ndim() != 1 || classes() < 2) throw std::invalid_argument("classifier: bad class count");
  const auto shapes = expected_shapes(classes());
  const auto ts = tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) {
    if (ts[i]->shape() != shapes[i]) {
      throw std::invalid_argument(fmt::format("classifier: {} has shape {}, expected {}",
                                              kParamTensorNames[i], numkit::shape_string(ts[i]->shape()),
                                              numkit::shape_string(shapes[i])));
    }
    if (!ts[i]->all_finite()) {
      throw std::invalid_argument(fmt::format("classifier: {} has non-finite values", kParamTensorNames[i]));
    }
  }
}

std::uint64_t ClassifierParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : tensors()) {
    for (double v : t->data()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 0x100000001b3ULL;
    }
    h = mix_seed(h);
  }
  return h;
}

std::size_t Posterior::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

Posterior forward(const Image& image, const ClassifierParams& params, ForwardCache* cache) {
  if (image.width() != kInputSize || image.height() != kInputSize) {
    throw std::invalid_argument(fmt::format("forward: expected a {0}x{0}x3 image, got {1}x{2}",
                                            kInputSize, image.width(), image.height()));
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.valid = false;
  const std::size_t k = params.classes();

  c.input = Tensor({3, kInputSize, kInputSize});
  for (std::size_t y = 0; y < kInputSize; ++y)
    for (std::size_t x = 0; x < kInputSize; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        c.input[(ch * kInputSize + y) * kInputSize + x] = image.at(x, y, ch);

  c.pre1 = Tensor({kConv1Out, kInputSize, kInputSize});
  conv3x3(c.input.data().data(), 3, kInputSize, params.conv1_w.data().data(), params.conv1_b.data().data(),
          kConv1Out, c.pre1.data().data());
  c.pool1 = Tensor({kConv1Out, kPool1Size, kPool1Size});
  c.arg1.assign(c.pool1.size(), 0);
  relu_pool(c.pre1.data().data(), kConv1Out, kInputSize, c.pool1.data().data(), c.arg1.data());

  c.pre2 = Tensor({kConv2Out, kPool1Size, kPool1Size});
  conv3x3(c.pool1.data().data(), kConv1Out, kPool1Size, params.conv2_w.data().data(),
          params.conv2_b.data().data(), kConv2Out, c.pre2.data().data());
  c.pool2 = Tensor({kConv2Out, kPool2Size, kPool2Size});
  c.arg2.assign(c.pool2.size(), 0);
  relu_pool(c.pre2.data().data(), kConv2Out, kPool1Size, c.pool2.data().data(), c.arg2.data());

  c.logits = Tensor({k});
  for (std::size_t o = 0; o < k; ++o) {
    const double* wrow = params.fc_w.data().data() + o * kFcInputs;
    double acc = params.fc_b[o];
    for (std::size_t j = 0; j < kFcInputs; ++j) acc += wrow[j] * c.pool2[j];
    c.logits[o] = acc;
  }
  softmax(c.logits, c.probs);
  if (cache) {
    c.params_fingerprint = params.fingerprint();
    c.valid = true;
  }
  return Posterior{c.probs};
}

Image backward_input(const Image& image, const ClassifierParams& params,
                     const std::vector<double>& upstream, const ForwardCache& cache) {
  if (upstream.size() != params.classes()) {
    throw std::invalid_argument("backward_input: upstream must have one entry per class");
  }
  check_cache(image, params, cache);
  const std::size_t k = params.classes();
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += upstream[i] * cache.probs[i];
  std::vector<double> dlogits(k);
  for (std::size_t i = 0; i < k; ++i) dlogits[i] = cache.probs[i] * (upstream[i] - mean);

  Tensor din({3, kInputSize, kInputSize});
  backward_core(params, cache, dlogits, nullptr, &din);
  Image out(kInputSize, kInputSize);
  for (std::size_t y = 0; y < kInputSize; ++y)
    for (std::size_t x = 0; x < kInputSize; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(x, y, ch) = din[(ch * kInputSize + y) * kInputSize + x];
  return out;
}

ParamGradients backward_params(const Image& image, const ClassifierParams& params, std::size_t label,
                               const ForwardCache& cache) {
  if (label >= params.classes()) throw std::invalid_argument("backward_params: label out of range");
  check_cache(image, params, cache);
  std::vector<double> dlogits = cache.probs;
  dlogits[label] -= 1.0;
  ParamGradients out{ClassifierParams::zeros(params.classes()), 0.0};
  out.loss = -std::log(std::max(cache.probs[label], 1e-300));
  backward_core(params, cache, dlogits, &out.grads, nullptr);
  return out;
}

std::vector<std::uint8_t> activation_pattern(const ForwardCache& cache) {
  std::vector<std::uint8_t> pattern;
  pattern.reserve(cache.pre1.size() + cache.pre2.size() + cache.arg1.size() + cache.arg2.size());
  for (double v : cache.pre1.data()) pattern.push_back(v > 0.0);
  for (double v : cache.pre2.data()) pattern.push_back(v > 0.0);
  // Winner position inside each 2x2 window.
  for (std::uint32_t a : cache.arg1) pattern.push_back(static_cast<std::uint8_t>(a % 2 + (a / kInputSize) % 2 * 2));
  for (std::uint32_t a : cache.arg2) pattern.push_back(static_cast<std::uint8_t>(a % 2 + (a / kPool1Size) % 2 * 2));
  return pattern;
}

ParamGradients batch_gradients(const Dataset& data, const std::vector<std::size_t>& indices,
                               const ClassifierParams& params) {
  if (indices.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  ParamGradients total{ClassifierParams::zeros(params.classes()), 0.0};
  ForwardCache cache;
  for (std::size_t i : indices) {
    const LabeledImage& sample = data.at(i);
    forward(sample.image, params, &cache);
    const ParamGradients g = backward_params(sample.image, params, sample.label, cache);
    auto dst = total.grads.tensors();
    const auto src = g.grads.tensors();
    for (std::size_t t = 0; t < kParamTensors; ++t) *dst[t] += *src[t];
    total.loss += g.loss;
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (Tensor* t : total.grads.tensors()) *t *= inv;
  total.loss *= inv;
  return total;
}

TrainReport train(const Dataset& training, const Dataset& test, std::size_t classes,
                  const TrainConfig& config) {
  if (training.empty()) throw std::invalid_argument("train: empty dataset");
  if (config.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  for (const LabeledImage& s : training) {
    if (s.label >= classes) throw std::invalid_argument("train: label out of range");
  }
  TrainReport report;
  report.params = ClassifierParams::kaiming(classes, config.seed);
  std::vector<Tensor> velocity;
  for (const Tensor* t : report.params.tensors()) velocity.push_back(Tensor::zeros_like(*t));

  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, epoch + 1));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const ParamGradients g = batch_gradients(training, batch, report.params);
      auto params = report.params.tensors();
      const auto grads = g.grads.tensors();
      for (std::size_t t = 0; t < kParamTensors; ++t) {
        // Decay applies to weights, not biases.
        const double wd = t % 2 == 0 ? config.weight_decay : 0.0;
        *params[t] += numkit::sgd_momentum_step(velocity[t], *grads[t], *params[t], lr, config.momentum, wd);
      }
      loss_sum += g.loss;
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (!test.empty()) report.epoch_test_accuracy.push_back(evaluate(test, report.params));
    lr *= config.lr_decay;
  }
  report.params.validate();
  report.train_accuracy = evaluate(training, report.params);
  report.test_accuracy = test.empty() ? 0.0 : evaluate(test, report.params);
  return report;
}

double evaluate(const Dataset& data, const ClassifierParams& params) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  for (const LabeledImage& s : data) correct += forward(s.image, params).argmax() == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_checkpoint(const std::filesystem::path& dir, const ClassifierParams& params,
                     const CheckpointInfo& info) {
  params.validate();
  if (!info.class_names.empty() && info.class_names.size() != params.classes()) {
    throw std::invalid_argument("save_checkpoint: class name count does not match the classifier");
  }
  std::filesystem::create_directories(dir);
  boost::property_tree::ptree manifest;
  manifest.put("classes", params.classes());
  std::string names;
  for (std::size_t i = 0; i < info.class_names.size(); ++i) names += (i ? "," : "") + info.class_names[i];
  manifest.put("class_names", names);
  manifest.put("train_accuracy", fmt::format("{:.6f}", info.train_accuracy));
  manifest.put("test_accuracy", fmt::format("{:.6f}", info.test_accuracy));
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) {
    const std::string file = std::string(kParamTensorNames[i]) + ".patd";
    numkit::save_patd(dir / file, *ts[i]);
    manifest.put(std::string("shape.") + kParamTensorNames[i], numkit::shape_string(ts[i]->shape()));
  }
  boost::property_tree::write_ini((dir / "manifest.txt").string(), manifest);
}

ClassifierParams load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info) {
  boost::property_tree::ptree manifest;
  try {
    boost::property_tree::read_ini((dir / "manifest.txt").string(), manifest);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error(fmt::format("cannot read checkpoint manifest in {}: {}", dir.string(), e.what()));
  }
  ClassifierParams p;
  auto ts = p.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) {
    *ts[i] = numkit::load_patd(dir / (std::string(kParamTensorNames[i]) + ".patd"));
  }
  p.validate();
  if (manifest.get<std::size_t>("classes") != p.classes()) {
    throw std::runtime_error("checkpoint manifest disagrees with the stored tensors");
  }
  if (info) {
    info->class_names.clear();
    const std::string names = manifest.get<std::string>("class_names", "");
    std::size_t start = 0;
    while (!names.empty() && start <= names.size()) {
      const std::size_t comma = std::min(names.find(',', start), names.size());
      info->class_names.push_back(names.substr(start, comma - start));
      start = comma + 1;
    }
    info->train_accuracy = manifest.get<double>("train_accuracy", 0.0);
    info->test_accuracy = manifest.get<double>("test_accuracy", 0.0);
  }
  return p;
}

}  // namespace physadv::cnn
