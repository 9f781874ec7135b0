#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "physadv/harness.hpp"
#include "physadv/rng.hpp"

using namespace physadv;
using namespace physadv::harness;
namespace fs = std::filesystem;

namespace {

// Two classes: bright left half vs bright right half.
cnn::Dataset halves(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  cnn::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    cnn::LabeledImage s{Image(cnn::kInputSize, cnn::kInputSize), i % 2};
    for (std::size_t y = 0; y < cnn::kInputSize; ++y) {
      for (std::size_t x = 0; x < cnn::kInputSize; ++x) {
        const bool bright = (x < cnn::kInputSize / 2) == (s.label == 0);
        for (std::size_t c = 0; c < 3; ++c) s.image.at(x, y, c) = rng.uniform(0.0, 0.5) + (bright ? 0.4 : 0.0);
      }
    }
    d.push_back(std::move(s));
  }
  return d;
}

std::vector<SampleRecord> records_for(const cnn::Dataset& d) {
  std::vector<SampleRecord> r(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    r[i].track = Track::kScene;
    r[i].split = Split::kTest;
    r[i].index = i;
    r[i].label = d[i].label;
    r[i].shape = d[i].label ? scene::ShapeClass::kCube : scene::ShapeClass::kSphere;
    r[i].seed = 100 + i;
  }
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file below root, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

const char* const kTinyConfig = R"([run]
seed = 5

[dataset]
classes = sphere,cube
train_per_class = 6
test_per_class = 4

[train]
epochs = 2
batch_size = 4

[targets]
per_class = 2

[attack]
fgsm_max_iterations = 40
zoo_max_iterations = 4

[reconstruct]
max_iterations = 5
optimizers = adam
learning_rates = 1e-4
max_targets = 1
)";

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "physadv");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("pixels"), std::invalid_argument);
  CHECK(variant_track(Variant::kSceneZoo) == Track::kScene);
  CHECK(variant_track(Variant::kCombined) == Track::kDiff);
}

TEST_CASE("config load, save and validation") {
  const fs::path dir = fresh_dir("physadv_config_test");
  write_file(dir / "c.ini", kTinyConfig);
  const ExperimentConfig cfg = ExperimentConfig::load(dir / "c.ini");
  CHECK(cfg.seed == 5);
  CHECK(cfg.dataset.seed == 5);
  CHECK(cfg.dataset.classes.size() == 2);
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.attacks.fgsm.max_iterations == 40);
  CHECK(cfg.attacks.zoo.max_iterations == 4);
  CHECK(cfg.attacks.zoo.lambda == 0.1);
  CHECK(cfg.attacks.variants.size() == kAllVariants.size());
  REQUIRE(cfg.reconstruct.grid.size() == 1);
  CHECK(cfg.reconstruct.grid[0].max_iterations == 5);

  cfg.save(dir / "saved.ini");
  const ExperimentConfig again = ExperimentConfig::load(dir / "saved.ini");
  CHECK(again.dataset.classes == cfg.dataset.classes);
  CHECK(again.attacks.fgsm.truncation == cfg.attacks.fgsm.truncation);
  again.save(dir / "saved2.ini");
  CHECK(read_file(dir / "saved.ini") == read_file(dir / "saved2.ini"));

  const ExperimentConfig defaults;
  CHECK(defaults.reconstruct.grid.size() == 6);
  CHECK_NOTHROW(defaults.validate());

  CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.ini"), ConfigError);
  write_file(dir / "bad_key.ini", "[train]\nepoch = 3\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad_key.ini"), ConfigError);
  write_file(dir / "bad_section.ini", "[training]\nepochs = 3\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad_section.ini"), ConfigError);
  write_file(dir / "bad_value.ini", "[train]\nepochs = three\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad_value.ini"), ConfigError);
  write_file(dir / "bad_class.ini", "[dataset]\nclasses = sphere,teapot\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad_class.ini"), ConfigError);
  write_file(dir / "one_class.ini", "[dataset]\nclasses = sphere\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "one_class.ini"), ConfigError);
  write_file(dir / "bad_batch.ini", "[attack]\nzoo_coord_batch = 15\n");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad_batch.ini"), ConfigError);
}

TEST_CASE("target set contracts") {
  cnn::TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 4;
  const cnn::ClassifierParams good = cnn::train(halves(200, 1), {}, 2, tc).params;
  const cnn::Dataset test = halves(40, 2);
  const std::vector<SampleRecord> records = records_for(test);
  REQUIRE(cnn::evaluate(test, good) == 1.0);

  SUBCASE("an accurate classifier yields n per class") {
    std::vector<std::string> notes;
    const auto targets = build_target_set(records, test, good, 2, 2, &notes);
    REQUIRE(targets.size() == 4);
    CHECK(notes.empty());
    CHECK(targets[0].record.label == 0);
    CHECK(targets[2].record.label == 1);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      CHECK(targets[i].confidence == cnn::forward(test[targets[i].record.index].image, good)[targets[i].record.label]);
      if (i % 2 == 1) CHECK(targets[i - 1].confidence >= targets[i].confidence);
    }
    CHECK(targets[0].id == fmt::format("scene-{:05d}", targets[0].record.index));
    // Nothing unselected in class 0 beats the selection's weakest member.
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i].label != 0 || i == targets[0].record.index || i == targets[1].record.index) continue;
      CHECK(cnn::forward(test[i].image, good)[0] <= targets[1].confidence);
    }
  }
  SUBCASE("a class that is never predicted is excluded with a note") {
    cnn::ClassifierParams biased = cnn::ClassifierParams::zeros(2);
    biased.fc_b[0] = 1.0;
    std::vector<std::string> notes;
    const auto targets = build_target_set(records, test, biased, 2, 3, &notes);
    CHECK(targets.size() == 3);
    for (const Target& t : targets) CHECK(t.record.label == 0);
    REQUIRE(notes.size() == 1);
    CHECK(notes[0].find("class 1") != std::string::npos);
  }
  SUBCASE("round trip through the CSV") {
    const fs::path dir = fresh_dir("physadv_targets_test");
    const auto targets = build_target_set(records, test, good, 2, 3);
    save_targets(dir / "t.csv", targets);
    const auto back = load_targets(dir / "t.csv");
    REQUIRE(back.size() == targets.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].id == targets[i].id);
      CHECK(back[i].record.seed == targets[i].record.seed);
      CHECK(back[i].record.shape == targets[i].record.shape);
      CHECK(back[i].confidence == targets[i].confidence);
    }
  }
}

TEST_CASE("mean curve holds stopped attacks at their last value") {
  attack::AttackResult a, b, skipped;
  a.confidence_trace = {1.0, 0.5};
  a.log_advantage_trace = {2.0, -1.0};
  a.distance_trace = {0.0, 3.0};
  b.confidence_trace = {0.8, 0.6, 0.4, 0.2};
  b.log_advantage_trace = {4.0, 3.0, 2.0, 1.0};
  b.distance_trace = {0.0, 1.0, 2.0, 3.0};
  skipped.applicable = false;
  skipped.confidence_trace = {0.0};
  const auto curve = mean_curve({a, b, skipped});
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].confidence == doctest::Approx(0.9));
  CHECK(curve[3].confidence == doctest::Approx(0.35));
  CHECK(curve[3].log_advantage == doctest::Approx(0.0));
  CHECK(curve[3].distance == doctest::Approx(3.0));
  CHECK(curve[1].active == 2);
  CHECK(curve[2].active == 1);
  CHECK(mean_curve({}).empty());
}

TEST_CASE("subset diagnostic endpoints") {
  const cnn::ClassifierParams p = cnn::ClassifierParams::kaiming(5, 9);
  const scene::BlackBoxScene x0 = scene::sample_scene(scene::ShapeClass::kCone, 4);
  scene::SceneVector delta{};
  Rng rng(5);
  for (double& d : delta) d = rng.uniform(-0.05, 0.05);
  const auto rows = subset_diagnostic(x0, delta, p, 2);
  REQUIRE(rows.size() == 16);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].groups.bits() == i);
  CHECK(rows[0].confidence == cnn::forward(scene::render_scene(x0), p)[2]);
  scene::BlackBoxScene full = scene::apply_perturbation_subset(x0, delta, scene::GroupSet::all());
  CHECK(rows[15].confidence == cnn::forward(scene::render_scene(full), p)[2]);

  // The full row reproduces a ZOO attack's final confidence.
  attack::AttackConfig cfg = attack::AttackConfig::defaults(attack::Mode::kZoo);
  cfg.max_iterations = 25;
  const std::size_t c = cnn::forward(scene::render_scene(x0), p).argmax();
  const attack::AttackResult r = attack::zoo_attack_scene(x0, c, p, cfg);
  scene::SceneVector dx{};
  std::copy(r.delta_x.data().begin(), r.delta_x.data().end(), dx.begin());
  const auto zoo_rows = subset_diagnostic(x0, dx, p, c);
  CHECK(zoo_rows[15].confidence == doctest::Approx(r.confidence_trace.back()).epsilon(1e-9));
  CHECK(zoo_rows[0].confidence == r.confidence_trace.front());
}

TEST_CASE("cli exit codes") {
  const fs::path dir = fresh_dir("physadv_cli_codes");
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"frobnicate"}) == 1);
  CHECK(run_cli({"attack", "--variant", "image", "--config", (dir / "missing.txt").string()}) == 1);
  CHECK(run_cli({"attack", "--variant", "pixels", "--out", dir.string()}) == 1);
  CHECK(run_cli({"train", "--jobs", "0"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
  // Valid usage on an empty output directory is a runtime failure.
  CHECK(run_cli({"report", "--out", dir.string()}) == 2);
}

TEST_CASE("tiny campaign: layout, recount and determinism") {
  const fs::path dir = fresh_dir("physadv_cli_campaign");
  write_file(dir / "c.ini", kTinyConfig);
  const std::string cfg = (dir / "c.ini").string();
  REQUIRE(run_cli({"campaign", "--config", cfg, "--out", (dir / "a").string()}) == 0);
  REQUIRE(run_cli({"campaign", "--config", cfg, "--out", (dir / "b").string(), "--jobs", "2"}) == 0);
  const auto a = tree(dir / "a");
  CHECK(a == tree(dir / "b"));

  for (const char* f : {"dataset/manifest.csv", "ckpt/diff/manifest.txt", "ckpt/scene/manifest.txt",
                        "targets/diff.csv", "targets/scene.csv", "report/table.csv", "report/defense.csv",
                        "report/reconstruct.csv", "report/curves/scene_zoo.csv", "config.ini"}) {
    CHECK_MESSAGE(a.count(f) == 1, f);
  }
  const Layout out{dir / "a"};
  const ExperimentConfig ec = ExperimentConfig::load(cfg);

  // The table equals a recount of the serialized results.
  const std::vector<ReportRow> rows = step_report(ec, out);
  REQUIRE(rows.size() == kAllVariants.size());
  for (const ReportRow& row : rows) {
    const auto targets = load_targets(out.targets(variant_track(row.variant)));
    std::size_t applicable = 0, successes = 0, longest = 0;
    for (const Target& t : targets) {
      const attack::AttackResult r = attack::load_result(out.attack(row.variant, t.id));
      applicable += r.applicable;
      successes += r.applicable && r.success;
      if (r.applicable) longest = std::max(longest, r.iterations_used);
    }
    CHECK(row.targets == targets.size());
    CHECK(row.summary.applicable == applicable);
    CHECK(row.summary.successes == successes);
    CHECK(row.summary.success_rate >= 0.0);
    CHECK(row.summary.success_rate <= 100.0);
    // One curve row per iteration index 0..T, T the longest run.
    const std::string curve = a.at("report/curves/" + std::string(variant_name(row.variant)) + ".csv");
    const auto lines = static_cast<std::size_t>(std::count(curve.begin(), curve.end(), '\n'));
    CHECK(lines == (applicable ? longest + 2 : 1));
  }
  // The report step rewrites identical files.
  CHECK(tree(dir / "a") == a);

  SUBCASE("single attack and train are reproducible") {
    const std::string id = load_targets(out.targets(Track::kScene)).front().id;
    const fs::path one = dir / "a" / "attacks" / "scene_zoo" / id;
    const std::string before = read_file(one / "trace.csv");
    REQUIRE(run_cli({"attack", "--config", cfg, "--out", (dir / "a").string(), "--variant", "scene_zoo",
                     "--target", id}) == 0);
    CHECK(read_file(one / "trace.csv") == before);
    CHECK(run_cli({"attack", "--config", cfg, "--out", (dir / "a").string(), "--variant", "scene_zoo",
                   "--target", "scene-99999"}) == 2);
    REQUIRE(run_cli({"train", "--config", cfg, "--out", (dir / "a").string(), "--seed", "7", "--track", "scene"}) == 0);
    const std::string w7 = read_file(dir / "a" / "ckpt" / "scene" / "fc_w.patd");
    REQUIRE(run_cli({"train", "--config", cfg, "--out", (dir / "a").string(), "--seed", "7", "--track", "scene"}) == 0);
    CHECK(read_file(dir / "a" / "ckpt" / "scene" / "fc_w.patd") == w7);
    CHECK(w7 != a.at("ckpt/scene/fc_w.patd"));
  }
}

TEST_CASE("empty target sets give an empty report") {
  const fs::path dir = fresh_dir("physadv_empty_report");
  ExperimentConfig cfg;
  cfg.attacks.variants = {Variant::kImage, Variant::kSceneZoo};
  const Layout out{dir};
  save_targets(out.targets(Track::kDiff), {});
  save_targets(out.targets(Track::kScene), {});
  const auto rows = step_report(cfg, out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].targets == 0);
  CHECK(rows[0].summary.applicable == 0);
  CHECK_FALSE(rows[0].summary.mean_perceptibility.has_value());
  CHECK(read_file(out.report() / "table.csv").find("image,diff,0,0,0,0,\n") != std::string::npos);
}
