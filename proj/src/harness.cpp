#include "physadv/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "physadv/numkit.hpp"
#include "physadv/parallel.hpp"
#include "physadv/rng.hpp"

namespace physadv::harness {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  std::vector<std::string> out;
  for (std::string& p : parts) {
    boost::trim(p);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += fmt_one(items[i]);
  }
  return out;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Reads one section, rejecting keys outside `known`.
class Section {
 public:
  Section(const ptree& root, const std::string& name, std::set<std::string> known) : name_(name) {
    if (auto child = root.get_child_optional(name)) {
      node_ = *child;
      for (const auto& [key, value] : node_) {
        if (!known.count(key)) throw ConfigError(fmt::format("[{}]: unknown key '{}'", name, key));
      }
    }
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    auto v = node_.get_optional<std::string>(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out = *v;
      } else if constexpr (std::is_floating_point_v<T>) {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing characters");
      } else {
        if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
        std::size_t used = 0;
        out = static_cast<T>(std::stoull(*v, &used));
        if (used != v->size()) throw std::invalid_argument("trailing characters");
      }
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("[{}] {}: cannot parse '{}'", name_, key, *v));
    }
  }

  std::optional<std::string> raw(const std::string& key) const {
    if (auto v = node_.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }

 private:
  std::string name_;
  ptree node_;
};

// Shortest round-trip text, so saved configs reload to identical values.
std::string num(double v) { return fmt::format("{}", v); }

cnn::TrainConfig train_config_for(const ExperimentConfig& cfg, Track track) {
  cnn::TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, fmt::format("train/{}", track_name(track)));
  return t;
}

attack::AttackConfig attack_config_for(Variant v, const Target& t, const ExperimentConfig& cfg) {
  attack::AttackConfig a = v == Variant::kSceneZoo ? cfg.attacks.zoo : cfg.attacks.fgsm;
  switch (v) {
    case Variant::kImage:
    case Variant::kSceneImage: a.mode = attack::Mode::kImageFgsm; break;
    case Variant::kSceneZoo: a.mode = attack::Mode::kZoo; break;
    default: a.mode = attack::Mode::kPhysicalFgsm; break;
  }
  a.seed = derive_seed(cfg.seed, fmt::format("attack/{}/{}", variant_name(v), t.id));
  return a;
}

attack::PhysicalSubset subset_for(Variant v) {
  switch (v) {
    case Variant::kSurfaceNormal: return {true, false, false};
    case Variant::kIllumination: return {false, true, false};
    case Variant::kMaterial: return {false, false, true};
    case Variant::kCombined: return attack::PhysicalSubset::all();
    default: throw std::logic_error("not a physical variant");
  }
}

bool is_physical(Variant v) {
  return v == Variant::kSurfaceNormal || v == Variant::kIllumination || v == Variant::kMaterial ||
         v == Variant::kCombined;
}

std::vector<SampleRecord> dataset_records(const Layout& out) {
  if (!fs::exists(out.dataset() / "manifest.csv")) {
    throw std::runtime_error("no dataset in " + out.dataset().string() + "; run gen-data first");
  }
  return read_manifest(out.dataset());
}

cnn::ClassifierParams load_classifier(const Layout& out, Track t) {
  if (!fs::exists(out.checkpoint(t) / "manifest.txt")) {
    throw std::runtime_error(fmt::format("no {} checkpoint in {}; run train first", track_name(t),
                                         out.checkpoint(t).string()));
  }
  return cnn::load_checkpoint(out.checkpoint(t));
}

std::vector<Target> load_track_targets(const Layout& out, Track t) {
  if (!fs::exists(out.targets(t))) {
    throw std::runtime_error("no target set at " + out.targets(t).string() + "; run targets first");
  }
  return load_targets(out.targets(t));
}

// Targets of the diff track with a successful, applicable image attack.
struct Adversary {
  Target target;
  attack::AttackResult result;
};

std::vector<Adversary> image_adversaries(const Layout& out, std::size_t limit) {
  std::vector<Adversary> advs;
  for (const Target& t : load_track_targets(out, Track::kDiff)) {
    const fs::path dir = out.attack(Variant::kImage, t.id);
    if (!fs::exists(dir / "result.txt")) {
      throw std::runtime_error("missing image attack result for " + t.id + "; run the image attack first");
    }
    attack::AttackResult r = attack::load_result(dir);
    if (r.applicable && r.success) advs.push_back({t, std::move(r)});
    if (limit && advs.size() == limit) break;
  }
  return advs;
}

// Tracks referenced by the configured variants, in track order.
std::vector<Track> needed_tracks(const ExperimentConfig& cfg) {
  std::vector<Track> out;
  for (Track t : {Track::kDiff, Track::kScene}) {
    for (Variant v : cfg.attacks.variants) {
      if (variant_track(v) == t) {
        out.push_back(t);
        break;
      }
    }
  }
  return out;
}

std::string config_label(const interpret::ReconstructConfig& c) {
  return fmt::format("{}_{:g}", interpret::optimizer_name(c.optimizer), c.learning_rate);
}

}  // namespace

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kImage: return "image";
    case Variant::kSurfaceNormal: return "surface_normal";
    case Variant::kIllumination: return "illumination";
    case Variant::kMaterial: return "material";
    case Variant::kCombined: return "combined";
    case Variant::kSceneImage: return "scene_image";
    case Variant::kSceneZoo: return "scene_zoo";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument(fmt::format("unknown attack variant '{}'", name));
}

Track variant_track(Variant v) {
  return v == Variant::kSceneImage || v == Variant::kSceneZoo ? Track::kScene : Track::kDiff;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  ptree root;
  try {
    boost::property_tree::read_ini(path.string(), root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("cannot parse config: {}", e.what()));
  }
  const std::set<std::string> sections = {"run", "dataset", "train", "targets", "attack", "reconstruct"};
  for (const auto& [key, child] : root) {
    if (!sections.count(key)) throw ConfigError(fmt::format("unknown config section '{}'", key));
  }

  ExperimentConfig cfg;
  const Section run(root, "run", {"seed", "jobs"});
  std::uint64_t seed = cfg.seed;
  run.read("seed", seed);
  run.read("jobs", cfg.jobs);

  const Section ds(root, "dataset", {"classes", "train_per_class", "test_per_class", "light_width", "light_height"});
  if (auto classes = ds.raw("classes")) {
    cfg.dataset.classes.clear();
    try {
      for (const std::string& c : split_list(*classes)) cfg.dataset.classes.push_back(scene::parse_shape(c));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("[dataset] classes: {}", e.what()));
    }
  }
  ds.read("train_per_class", cfg.dataset.train_per_class);
  ds.read("test_per_class", cfg.dataset.test_per_class);
  ds.read("light_width", cfg.dataset.light_width);
  ds.read("light_height", cfg.dataset.light_height);

  const Section tr(root, "train", {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "lr_decay"});
  tr.read("epochs", cfg.train.epochs);
  tr.read("batch_size", cfg.train.batch_size);
  tr.read("learning_rate", cfg.train.learning_rate);
  tr.read("momentum", cfg.train.momentum);
  tr.read("weight_decay", cfg.train.weight_decay);
  tr.read("lr_decay", cfg.train.lr_decay);

  const Section tg(root, "targets", {"per_class"});
  tg.read("per_class", cfg.targets_per_class);

  const Section at(root, "attack",
                   {"variants", "image_eta", "normals_eta", "light_eta", "material_eta", "fgsm_max_iterations",
                    "truncation", "zoo_eta", "zoo_max_iterations", "zoo_delta", "zoo_lambda", "zoo_coord_batch",
                    "zoo_beta1", "zoo_beta2", "zoo_eps"});
  if (auto vs = at.raw("variants")) {
    cfg.attacks.variants.clear();
    try {
      for (const std::string& v : split_list(*vs)) cfg.attacks.variants.push_back(parse_variant(v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("[attack] variants: {}", e.what()));
    }
  }
  attack::AttackConfig& f = cfg.attacks.fgsm;
  at.read("image_eta", f.eta);
  at.read("normals_eta", f.physical_eta.normals);
  at.read("light_eta", f.physical_eta.light);
  at.read("material_eta", f.physical_eta.material);
  at.read("fgsm_max_iterations", f.max_iterations);
  at.read("truncation", f.truncation);
  attack::AttackConfig& z = cfg.attacks.zoo;
  at.read("zoo_eta", z.eta);
  at.read("zoo_max_iterations", z.max_iterations);
  at.read("zoo_delta", z.delta);
  at.read("zoo_lambda", z.lambda);
  at.read("zoo_coord_batch", z.coord_batch);
  at.read("zoo_beta1", z.adam_beta1);
  at.read("zoo_beta2", z.adam_beta2);
  at.read("zoo_eps", z.adam_eps);

  const Section rc(root, "reconstruct",
                   {"max_iterations", "optimizers", "learning_rates", "momentum", "defense_optimizer",
                    "defense_learning_rate", "max_targets"});
  std::size_t iters = 500;
  double momentum = 0.9;
  rc.read("max_iterations", iters);
  rc.read("momentum", momentum);
  std::vector<interpret::Optimizer> opts = {interpret::Optimizer::kSgdMomentum, interpret::Optimizer::kAdam};
  std::vector<double> rates = {1e-3, 1e-4, 1e-5};
  try {
    if (auto o = rc.raw("optimizers")) {
      opts.clear();
      for (const std::string& s : split_list(*o)) opts.push_back(interpret::parse_optimizer(s));
    }
    if (auto r = rc.raw("learning_rates")) {
      rates.clear();
      for (const std::string& s : split_list(*r)) rates.push_back(std::stod(s));
    }
    if (auto d = rc.raw("defense_optimizer")) cfg.reconstruct.defense.optimizer = interpret::parse_optimizer(*d);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("[reconstruct]: {}", e.what()));
  }
  cfg.reconstruct.grid.clear();
  for (interpret::Optimizer o : opts) {
    for (double lr : rates) cfg.reconstruct.grid.push_back({o, lr, iters, momentum});
  }
  rc.read("defense_learning_rate", cfg.reconstruct.defense.learning_rate);
  cfg.reconstruct.defense.max_iterations = iters;
  cfg.reconstruct.defense.momentum = momentum;
  rc.read("max_targets", cfg.reconstruct.max_targets);

  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

void ExperimentConfig::save(const fs::path& path) const {
  std::ofstream out = open_out(path);
  // jobs is left out: it never changes results, and saved configs are part
  // of the byte-compared output tree.
  out << "[run]\n"
      << "seed = " << seed << "\n\n";
  out << "[dataset]\n"
      << "classes = "
      << join(dataset.classes, [](scene::ShapeClass c) { return std::string(scene::shape_name(c)); }) << "\n"
      << "train_per_class = " << dataset.train_per_class << "\n"
      << "test_per_class = " << dataset.test_per_class << "\n"
      << "light_width = " << dataset.light_width << "\n"
      << "light_height = " << dataset.light_height << "\n\n";
  out << "[train]\n"
      << "epochs = " << train.epochs << "\n"
      << "batch_size = " << train.batch_size << "\n"
      << "learning_rate = " << num(train.learning_rate) << "\n"
      << "momentum = " << num(train.momentum) << "\n"
      << "weight_decay = " << num(train.weight_decay) << "\n"
      << "lr_decay = " << num(train.lr_decay) << "\n\n";
  out << "[targets]\nper_class = " << targets_per_class << "\n\n";
  const attack::AttackConfig& f = attacks.fgsm;
  const attack::AttackConfig& z = attacks.zoo;
  out << "[attack]\n"
      << "variants = " << join(attacks.variants, [](Variant v) { return std::string(variant_name(v)); }) << "\n"
      << "image_eta = " << num(f.eta) << "\n"
      << "normals_eta = " << num(f.physical_eta.normals) << "\n"
      << "light_eta = " << num(f.physical_eta.light) << "\n"
      << "material_eta = " << num(f.physical_eta.material) << "\n"
      << "fgsm_max_iterations = " << f.max_iterations << "\n"
      << "truncation = " << num(f.truncation) << "\n"
      << "zoo_eta = " << num(z.eta) << "\n"
      << "zoo_max_iterations = " << z.max_iterations << "\n"
      << "zoo_delta = " << num(z.delta) << "\n"
      << "zoo_lambda = " << num(z.lambda) << "\n"
      << "zoo_coord_batch = " << z.coord_batch << "\n"
      << "zoo_beta1 = " << num(z.adam_beta1) << "\n"
      << "zoo_beta2 = " << num(z.adam_beta2) << "\n"
      << "zoo_eps = " << num(z.adam_eps) << "\n\n";
  // The grid is stored as its optimizer x learning-rate product.
  std::vector<interpret::Optimizer> opts;
  std::vector<double> rates;
  for (const auto& c : reconstruct.grid) {
    if (std::find(opts.begin(), opts.end(), c.optimizer) == opts.end()) opts.push_back(c.optimizer);
    if (std::find(rates.begin(), rates.end(), c.learning_rate) == rates.end()) rates.push_back(c.learning_rate);
  }
  if (opts.size() * rates.size() != reconstruct.grid.size()) {
    throw ConfigError("reconstruction grid is not an optimizer x learning-rate product");
  }
  out << "[reconstruct]\n"
      << "max_iterations = " << reconstruct.defense.max_iterations << "\n"
      << "optimizers = "
      << join(opts, [](interpret::Optimizer o) { return std::string(interpret::optimizer_name(o)); }) << "\n"
      << "learning_rates = " << join(rates, num) << "\n"
      << "momentum = " << num(reconstruct.defense.momentum) << "\n"
      << "defense_optimizer = " << interpret::optimizer_name(reconstruct.defense.optimizer) << "\n"
      << "defense_learning_rate = " << num(reconstruct.defense.learning_rate) << "\n"
      << "max_targets = " << reconstruct.max_targets << "\n";
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void ExperimentConfig::validate() const {
  if (jobs == 0) throw ConfigError("[run] jobs must be >= 1");
  if (dataset.classes.size() < 2) throw ConfigError("[dataset] needs at least two classes");
  std::set<scene::ShapeClass> unique(dataset.classes.begin(), dataset.classes.end());
  if (unique.size() != dataset.classes.size()) throw ConfigError("[dataset] classes repeat");
  if (dataset.train_per_class == 0 || dataset.test_per_class == 0) {
    throw ConfigError("[dataset] per-class counts must be >= 1");
  }
  if (dataset.light_width < 2 || dataset.light_height < 2) throw ConfigError("[dataset] light grid must be >= 2x2");
  if (dataset.seed != seed) throw ConfigError("dataset seed must follow the run seed");
  if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("[train] epochs and batch_size must be >= 1");
  if (!(train.learning_rate > 0.0)) throw ConfigError("[train] learning_rate must be > 0");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) throw ConfigError("[train] momentum must be in [0, 1)");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("[train] weight_decay must be >= 0");
  if (!(train.lr_decay > 0.0 && train.lr_decay <= 1.0)) throw ConfigError("[train] lr_decay must be in (0, 1]");
  if (targets_per_class == 0) throw ConfigError("[targets] per_class must be >= 1");
  if (attacks.variants.empty()) throw ConfigError("[attack] variants is empty");
  try {
    // FGSM ignores coord_batch, so any dimensionality admits it.
    attacks.fgsm.validate(std::numeric_limits<std::size_t>::max());
    attacks.zoo.validate(scene::kSceneDims);
    if (reconstruct.grid.empty()) throw std::invalid_argument("grid is empty");
    for (const auto& c : reconstruct.grid) c.validate();
    reconstruct.defense.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  dataset.seed = s;
  train.seed = s;
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

std::vector<Target> build_target_set(const std::vector<SampleRecord>& test, const cnn::Dataset& images,
                                     const cnn::ClassifierParams& params, std::size_t classes,
                                     std::size_t per_class, std::vector<std::string>* notes) {
  if (test.size() != images.size()) throw std::invalid_argument("build_target_set: records and images differ");
  std::vector<std::vector<Target>> by_class(classes);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].label >= classes) throw std::invalid_argument("build_target_set: label out of range");
    const cnn::Posterior z = cnn::forward(images[i].image, params);
    if (z.argmax() != test[i].label) continue;
    by_class[test[i].label].push_back(
        {fmt::format("{}-{:05d}", track_name(test[i].track), test[i].index), test[i], z[test[i].label]});
  }
  std::vector<Target> out;
  for (std::size_t k = 0; k < classes; ++k) {
    auto& c = by_class[k];
    std::stable_sort(c.begin(), c.end(), [](const Target& a, const Target& b) { return a.confidence > b.confidence; });
    if (c.size() < per_class && notes) {
      notes->push_back(fmt::format("class {} has {} correctly classified test items, fewer than {}", k, c.size(),
                                   per_class));
    }
    for (std::size_t j = 0; j < std::min(per_class, c.size()); ++j) out.push_back(c[j]);
  }
  return out;
}

void save_targets(const fs::path& path, const std::vector<Target>& targets) {
  std::ofstream out = open_out(path);
  out << "id,track,index,label,shape,seed,confidence\n";
  for (const Target& t : targets) {
    out << fmt::format("{},{},{},{},{},{},{}\n", t.id, track_name(t.record.track), t.record.index, t.record.label,
                       scene::shape_name(t.record.shape), t.record.seed, t.confidence);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Target> load_targets(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,track,index,label,shape,seed,confidence") {
    throw std::runtime_error("unexpected target file header in " + path.string());
  }
  std::vector<Target> targets;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_list(line);
    if (cells.size() != 7) throw std::runtime_error("malformed target row: " + line);
    Target t;
    t.id = cells[0];
    t.record.track = parse_track(cells[1]);
    t.record.split = Split::kTest;
    t.record.index = std::stoull(cells[2]);
    t.record.label = std::stoull(cells[3]);
    t.record.shape = scene::parse_shape(cells[4]);
    t.record.seed = std::stoull(cells[5]);
    t.confidence = std::stod(cells[6]);
    targets.push_back(std::move(t));
  }
  return targets;
}

Image clean_image(const Target& t, const DatasetSpec& spec) { return render_record(t.record, spec); }

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

attack::AttackResult run_attack(Variant v, const Target& t, const ExperimentConfig& cfg,
                                const cnn::ClassifierParams& params, const attack::Observer& observe) {
  if (t.record.track != variant_track(v)) {
    throw std::invalid_argument(fmt::format("target {} is not on the {} track", t.id, track_name(variant_track(v))));
  }
  const attack::AttackConfig a = attack_config_for(v, t, cfg);
  const std::size_t label = t.record.label;
  if (v == Variant::kSceneZoo) return attack::zoo_attack_scene(black_box_scene_for(t.record), label, params, a, observe);
  if (is_physical(v)) {
    return attack::fgsm_attack_physical(physical_scene_for(t.record, cfg.dataset), label, params, a, subset_for(v),
                                        observe);
  }
  return attack::fgsm_attack_image(clean_image(t, cfg.dataset), label, params, a, observe);
}

std::vector<SubsetRow> subset_diagnostic(const scene::BlackBoxScene& x0, const scene::SceneVector& delta,
                                         const cnn::ClassifierParams& params, std::size_t target) {
  std::vector<SubsetRow> rows;
  for (unsigned bits = 0; bits < 16; ++bits) {
    const scene::GroupSet g(static_cast<std::uint8_t>(bits));
    const cnn::Posterior z = cnn::forward(scene::render_scene(scene::apply_perturbation_subset(x0, delta, g)), params);
    rows.push_back({g, z[target], z.argmax()});
  }
  return rows;
}

std::vector<CurvePoint> mean_curve(const std::vector<attack::AttackResult>& results) {
  std::vector<const attack::AttackResult*> used;
  std::size_t length = 0;
  for (const auto& r : results) {
    if (!r.applicable || r.confidence_trace.empty()) continue;
    used.push_back(&r);
    length = std::max(length, r.confidence_trace.size());
  }
  std::vector<CurvePoint> curve(length);
  for (std::size_t t = 0; t < length; ++t) {
    CurvePoint& p = curve[t];
    for (const attack::AttackResult* r : used) {
      const std::size_t i = std::min(t, r->confidence_trace.size() - 1);
      p.confidence += r->confidence_trace[i];
      p.log_advantage += r->log_advantage_trace[i];
      p.distance += r->distance_trace[i];
      if (t < r->confidence_trace.size()) ++p.active;
    }
    const double n = static_cast<double>(used.size());
    p.confidence /= n;
    p.log_advantage /= n;
    p.distance /= n;
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

void step_gen_data(const ExperimentConfig& cfg, const Layout& out) {
  log(fmt::format("gen-data: {} classes, {}/{} per class", cfg.dataset.classes.size(), cfg.dataset.train_per_class,
                  cfg.dataset.test_per_class));
  write_dataset(out.dataset(), cfg.dataset, cfg.jobs);
  cfg.save(out.root / "config.ini");
}

void step_train(const ExperimentConfig& cfg, const Layout& out, std::optional<Track> only) {
  const std::vector<SampleRecord> records = dataset_records(out);
  for (Track t : only ? std::vector<Track>{*only} : needed_tracks(cfg)) {
    const cnn::Dataset train = load_images(select(records, t, Split::kTrain), cfg.dataset, cfg.jobs);
    const cnn::Dataset test = load_images(select(records, t, Split::kTest), cfg.dataset, cfg.jobs);
    log(fmt::format("train {}: {} training images", track_name(t), train.size()));
    const cnn::TrainReport rep = cnn::train(train, test, cfg.dataset.classes.size(), train_config_for(cfg, t));
    log(fmt::format("train {}: test accuracy {:.4f}", track_name(t), rep.test_accuracy));
    cnn::save_checkpoint(out.checkpoint(t), rep.params,
                         {cfg.dataset.class_names(), rep.train_accuracy, rep.test_accuracy});
    std::ofstream curve = open_out(out.checkpoint(t) / "train_curve.csv");
    curve << "epoch,loss,test_accuracy\n";
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
      curve << fmt::format("{},{},{}\n", e + 1, rep.epoch_loss[e],
                           e < rep.epoch_test_accuracy.size() ? rep.epoch_test_accuracy[e] : 0.0);
    }
  }
}

void step_targets(const ExperimentConfig& cfg, const Layout& out) {
  const std::vector<SampleRecord> records = dataset_records(out);
  for (Track t : needed_tracks(cfg)) {
    const std::vector<SampleRecord> test = select(records, t, Split::kTest);
    const cnn::Dataset images = load_images(test, cfg.dataset, cfg.jobs);
    std::vector<std::string> notes;
    const std::vector<Target> targets = build_target_set(test, images, load_classifier(out, t),
                                                         cfg.dataset.classes.size(), cfg.targets_per_class, &notes);
    for (const std::string& n : notes) log(fmt::format("targets {}: {}", track_name(t), n));
    log(fmt::format("targets {}: {} targets", track_name(t), targets.size()));
    save_targets(out.targets(t), targets);
  }
}

void step_attack(const ExperimentConfig& cfg, const Layout& out, Variant v, const std::optional<std::string>& target_id) {
  const Track track = variant_track(v);
  std::vector<Target> targets = load_track_targets(out, track);
  if (target_id) {
    std::erase_if(targets, [&](const Target& t) { return t.id != *target_id; });
    if (targets.empty()) throw std::runtime_error(fmt::format("no target '{}' in the {} set", *target_id, track_name(track)));
  }
  const cnn::ClassifierParams params = load_classifier(out, track);
  log(fmt::format("attack {}: {} targets", variant_name(v), targets.size()));
  // Failures are per target; the campaign keeps going and reports them at the end.
  std::vector<std::string> errors(targets.size());
  parallel_for(targets.size(), cfg.jobs, [&](std::size_t i) {
    try {
      const attack::AttackResult r = run_attack(v, targets[i], cfg, params);
      attack::save_result(out.attack(v, targets[i].id), r, clean_image(targets[i], cfg.dataset));
      if (v == Variant::kSceneZoo) {
        scene::save_scene(out.attack(v, targets[i].id) / "scene.txt", black_box_scene_for(targets[i].record));
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    log(fmt::format("attack {} on {} failed: {}", variant_name(v), targets[i].id, errors[i]));
  }
  if (failed) throw std::runtime_error(fmt::format("{} of {} {} attacks failed", failed, targets.size(), variant_name(v)));
}

void step_diagnose_subsets(const ExperimentConfig& cfg, const Layout& out) {
  const cnn::ClassifierParams params = load_classifier(out, Track::kScene);
  const fs::path dir = out.report() / "subsets";
  fs::create_directories(dir);
  std::size_t written = 0;
  for (const Target& t : load_track_targets(out, Track::kScene)) {
    const fs::path adir = out.attack(Variant::kSceneZoo, t.id);
    if (!fs::exists(adir / "result.txt")) continue;
    const attack::AttackResult r = attack::load_result(adir);
    if (!r.applicable || !r.success) continue;
    if (r.delta_x.size() != scene::kSceneDims) throw std::runtime_error("ZOO result has the wrong dimensionality");
    scene::SceneVector delta{};
    std::copy(r.delta_x.data().begin(), r.delta_x.data().end(), delta.begin());
    std::ofstream csv = open_out(dir / (t.id + ".csv"));
    csv << "lighting,rotation,translation,color,conf,predicted\n";
    for (const SubsetRow& row : subset_diagnostic(black_box_scene_for(t.record), delta, params, t.record.label)) {
      const auto bit = [&](scene::ParamGroup g) { return row.groups.contains(g) ? 1 : 0; };
      csv << fmt::format("{},{},{},{},{},{}\n", bit(scene::ParamGroup::kLighting), bit(scene::ParamGroup::kRotation),
                         bit(scene::ParamGroup::kTranslation), bit(scene::ParamGroup::kColor), row.confidence,
                         row.prediction);
    }
    ++written;
  }
  (void)cfg;
  log(fmt::format("diagnose-subsets: {} successful ZOO attacks", written));
}

void step_reconstruct(const ExperimentConfig& cfg, const Layout& out) {
  const cnn::ClassifierParams params = load_classifier(out, Track::kDiff);
  const std::vector<Adversary> advs = image_adversaries(out, cfg.reconstruct.max_targets);
  log(fmt::format("reconstruct: {} image-space adversaries, {} configs", advs.size(), cfg.reconstruct.grid.size()));
  std::vector<std::vector<interpret::ReconstructionResult>> all(advs.size());
  parallel_for(advs.size(), cfg.jobs, [&](std::size_t i) {
    const Target& t = advs[i].target;
    const diffrender::PhysicalScene x0 = physical_scene_for(t.record, cfg.dataset);
    const Image y_adv(clean_image(t, cfg.dataset).tensor() + advs[i].result.delta_y.tensor());
    all[i] = interpret::reconstruct_grid(x0, y_adv, cfg.reconstruct.grid, params, t.record.label,
                                         advs[i].result.final_prediction);
  });
  std::ofstream summary = open_out(out.report() / "reconstruct.csv");
  summary << "id,true_class,adversarial_class,best_config,initial_l1,final_l1,relative_drop,prediction,outcome\n";
  for (std::size_t i = 0; i < advs.size(); ++i) {
    const fs::path dir = out.reconstruction(advs[i].target.id);
    const auto& results = all[i];
    std::ofstream curve = open_out(dir / "recon_curve.csv");
    curve << "iter";
    for (const auto& r : results) curve << "," << config_label(r.config);
    curve << "\n";
    const std::size_t rows = results.front().loss_curve.size();
    for (std::size_t t = 0; t < rows; ++t) {
      curve << t;
      for (const auto& r : results) curve << "," << fmt::format("{}", r.loss_curve[t]);
      curve << "\n";
    }
    std::ofstream outcome = open_out(dir / "outcome.csv");
    outcome << "config,initial_l1,final_l1,prediction,outcome\n";
    for (const auto& r : results) {
      outcome << fmt::format("{},{},{},{},{}\n", config_label(r.config), r.loss_curve.front(), r.final_l1,
                             r.rerender_prediction, interpret::outcome_name(r.outcome));
    }
    const auto& best = results[interpret::best_index(results)];
    const double init = best.loss_curve.front();
    summary << fmt::format("{},{},{},{},{},{},{},{},{}\n", advs[i].target.id, advs[i].target.record.label,
                           advs[i].result.final_prediction, config_label(best.config), init, best.final_l1,
                           init > 0.0 ? 1.0 - best.final_l1 / init : 0.0, best.rerender_prediction,
                           interpret::outcome_name(best.outcome));
  }
}

void step_defend(const ExperimentConfig& cfg, const Layout& out) {
  const cnn::ClassifierParams params = load_classifier(out, Track::kDiff);
  const std::vector<Adversary> advs = image_adversaries(out, 0);
  log(fmt::format("defend: {} image-space adversaries", advs.size()));
  std::vector<std::size_t> predictions(advs.size());
  parallel_for(advs.size(), cfg.jobs, [&](std::size_t i) {
    const Target& t = advs[i].target;
    const Image y_adv(clean_image(t, cfg.dataset).tensor() + advs[i].result.delta_y.tensor());
    predictions[i] =
        interpret::rerender_defense(physical_scene_for(t.record, cfg.dataset), y_adv, params, cfg.reconstruct.defense);
  });
  std::ofstream csv = open_out(out.report() / "defense.csv");
  csv << "id,true_class,adversarial_class,rerender_prediction,outcome\n";
  std::size_t reverted = 0;
  for (std::size_t i = 0; i < advs.size(); ++i) {
    const auto outcome = interpret::classify_outcome(predictions[i], advs[i].target.record.label,
                                                     advs[i].result.final_prediction);
    reverted += outcome == interpret::LabelOutcome::kRevertedToTrue;
    csv << fmt::format("{},{},{},{},{}\n", advs[i].target.id, advs[i].target.record.label,
                       advs[i].result.final_prediction, predictions[i], interpret::outcome_name(outcome));
  }
  log(fmt::format("defend: {} of {} reverted to the true class", reverted, advs.size()));
}

std::vector<ReportRow> step_report(const ExperimentConfig& cfg, const Layout& out) {
  std::vector<ReportRow> rows;
  fs::create_directories(out.report() / "curves");
  std::ofstream table = open_out(out.report() / "table.csv");
  table << "variant,track,targets,applicable,successes,success_rate,mean_p\n";
  for (Variant v : cfg.attacks.variants) {
    const std::vector<Target> targets = load_track_targets(out, variant_track(v));
    std::vector<attack::AttackResult> results;
    for (const Target& t : targets) {
      const fs::path dir = out.attack(v, t.id);
      if (!fs::exists(dir / "result.txt")) {
        throw std::runtime_error(fmt::format("missing {} result for {}", variant_name(v), t.id));
      }
      results.push_back(attack::load_result(dir));
    }
    ReportRow row{v, targets.size(), {}};
    if (results.empty()) {
      log(fmt::format("report {}: no targets", variant_name(v)));
    } else {
      row.summary = attack::attack_success_summary(results);
    }
    table << fmt::format("{},{},{},{},{},{},{}\n", variant_name(v), track_name(variant_track(v)), row.targets,
                         row.summary.applicable, row.summary.successes, row.summary.success_rate,
                         row.summary.mean_perceptibility ? fmt::format("{}", *row.summary.mean_perceptibility) : "");
    std::ofstream curve = open_out(out.report() / "curves" / (std::string(variant_name(v)) + ".csv"));
    curve << "iter,mean_conf,mean_log_advantage,mean_distance,active\n";
    const std::vector<CurvePoint> points = mean_curve(results);
    for (std::size_t t = 0; t < points.size(); ++t) {
      curve << fmt::format("{},{},{},{},{}\n", t, points[t].confidence, points[t].log_advantage, points[t].distance,
                           points[t].active);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<ReportRow> run_campaign(const ExperimentConfig& cfg, const Layout& out) {
  step_gen_data(cfg, out);
  step_train(cfg, out);
  step_targets(cfg, out);
  for (Variant v : cfg.attacks.variants) step_attack(cfg, out, v);
  const auto has = [&](Variant v) {
    return std::find(cfg.attacks.variants.begin(), cfg.attacks.variants.end(), v) != cfg.attacks.variants.end();
  };
  if (has(Variant::kSceneZoo)) step_diagnose_subsets(cfg, out);
  if (has(Variant::kImage)) {
    step_reconstruct(cfg, out);
    step_defend(cfg, out);
  }
  return step_report(cfg, out);
}

}  // namespace physadv::harness
