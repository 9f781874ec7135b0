// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails. Usage: acceptance [work-dir] [--jobs N]
//
// The desk campaign (full dataset, both classifiers, every attack variant)
// runs once in <work-dir>/desk and feeds criteria 3, 4, 5, 7 and 9b.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include <fmt/format.h>

#include "gradcheck.hpp"
#include "physadv/harness.hpp"
#include "physadv/numkit.hpp"
#include "physadv/rng.hpp"
#include "render_gradcheck.hpp"
#include "richardson.hpp"

using namespace physadv;
using namespace physadv::harness;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kRenderDelta = 1e-5;
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kRenderScenes = 20;
constexpr std::size_t kCnnCoordinates = 50;
constexpr double kMinAccuracy = 0.90;
constexpr double kMaxTrainSeconds = 600.0;
constexpr std::size_t kMinTargets = 25;
constexpr double kMinImageMargin = 5.0;  // percentage points
constexpr double kRichardsonLow = 50.0, kRichardsonHigh = 200.0;
constexpr std::size_t kTruncationAttacks = 10;
constexpr double kTruncationSlack = 1e-12;
constexpr double kMaxPlantedRatio = 0.10;
constexpr std::size_t kMinDefenseAdversaries = 20;
constexpr double kMinReversion = 0.60;
constexpr double kIdentityTolerance = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what) {
  if (!pass) ++failures;
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
}

void note(const std::string& what) {
  std::printf("       %s\n", what.c_str());
  std::fflush(stdout);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

// 1. Renderer gradients against central differences.
void renderer_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0, excluded = 0;
  for (std::size_t s = 0; s < kRenderScenes; ++s) {
    const diffrender::PhysicalScene scene = diffrender::random_scene(8, 8, 8, 4, 1000 + s);
    Rng rng(2000 + s);
    Image up(8, 8);
    for (double& u : up.data()) u = rng.uniform(-1.0, 1.0);
    const testing::RenderGradCheck c = testing::check_render_gradients(scene, up, kRenderDelta);
    worst = std::max(worst, c.max_rel_error());
    checked += c.checked();
    excluded += c.excluded();
  }
  const double secs = seconds_since(t0);
  report(1, worst <= kGradTolerance && secs < 120.0 && checked > 0,
         fmt::format("render_backward vs central differences on {} scenes: max rel err {:.2e} over {} coordinates "
                     "({} at kinks excluded), {:.1f} s",
                     kRenderScenes, worst, checked, excluded, secs));
}

// 2. Classifier input and parameter gradients.
void classifier_gradients() {
  constexpr std::size_t classes = 5;
  Rng rng(77);
  cnn::ClassifierParams p = cnn::ClassifierParams::kaiming(classes, 78);
  for (numkit::Tensor* t : {&p.conv1_b, &p.conv2_b, &p.fc_b})
    for (double& v : t->data()) v = rng.uniform(-0.1, 0.1);
  Image img(cnn::kInputSize, cnn::kInputSize);
  for (double& v : img.data()) v = rng.uniform(0.0, 1.0);
  const std::size_t label = 2;
  std::vector<double> up(classes);
  for (double& u : up) u = rng.uniform(-1.0, 1.0);

  cnn::ForwardCache cache;
  cnn::forward(img, p, &cache);
  const auto pattern = cnn::activation_pattern(cache);
  auto pattern_at = [](const Image& x, const cnn::ClassifierParams& q) {
    cnn::ForwardCache c;
    cnn::forward(x, q, &c);
    return cnn::activation_pattern(c);
  };
  constexpr double d = 1e-5;

  const Image gin = cnn::backward_input(img, p, up, cache);
  auto project = [&](const Image& x) {
    const cnn::Posterior z = cnn::forward(x, p);
    double s = 0.0;
    for (std::size_t k = 0; k < classes; ++k) s += up[k] * z[k];
    return s;
  };
  testing::GradCheckStats in_stats;
  for (std::size_t tries = 0; in_stats.checked < kCnnCoordinates && tries < 10 * kCnnCoordinates; ++tries) {
    const std::size_t i = rng.index(img.size());
    Image a = img, b = img;
    a[i] += d;
    b[i] -= d;
    if (pattern_at(a, p) != pattern || pattern_at(b, p) != pattern) {
      ++in_stats.excluded;
      continue;
    }
    in_stats.add(gin[i], (project(a) - project(b)) / (2 * d));
  }

  const cnn::ParamGradients g = cnn::backward_params(img, p, label, cache);
  auto loss = [&](const cnn::ClassifierParams& q) { return -std::log(cnn::forward(img, q)[label]); };
  testing::GradCheckStats par_stats;
  for (std::size_t tries = 0; par_stats.checked < kCnnCoordinates && tries < 10 * kCnnCoordinates; ++tries) {
    const std::size_t t = tries % cnn::kParamTensors;
    const std::size_t i = rng.index(p.tensors()[t]->size());
    cnn::ClassifierParams a = p, b = p;
    (*a.tensors()[t])[i] += d;
    (*b.tensors()[t])[i] -= d;
    if (pattern_at(img, a) != pattern || pattern_at(img, b) != pattern) {
      ++par_stats.excluded;
      continue;
    }
    par_stats.add((*g.grads.tensors()[t])[i], (loss(a) - loss(b)) / (2 * d));
  }
  const bool pass = in_stats.checked == kCnnCoordinates && par_stats.checked == kCnnCoordinates &&
                    in_stats.max_rel_error <= kGradTolerance && par_stats.max_rel_error <= kGradTolerance;
  report(2, pass,
         fmt::format("classifier gradients: input max rel err {:.2e} ({} coords), parameter max rel err {:.2e} "
                     "({} coords)",
                     in_stats.max_rel_error, in_stats.checked, par_stats.max_rel_error, par_stats.checked));
}

// Full desk campaign; returns the report rows.
struct Desk {
  ExperimentConfig cfg;
  Layout out;
  std::vector<ReportRow> rows;
};

const ReportRow& row_of(const Desk& desk, Variant v) {
  for (const ReportRow& r : desk.rows) {
    if (r.variant == v) return r;
  }
  throw std::logic_error("variant missing from the report");
}

Desk desk_campaign(const fs::path& dir, std::size_t jobs) {
  Desk desk;
  desk.cfg.jobs = jobs;
  desk.cfg.reconstruct.max_targets = 10;
  desk.out = Layout{dir};
  fs::remove_all(dir);

  step_gen_data(desk.cfg, desk.out);
  std::map<Track, double> secs;
  for (Track t : {Track::kDiff, Track::kScene}) {
    // Training is sequential inside cnn::train, so this is single-threaded time.
    const auto t0 = Clock::now();
    step_train(desk.cfg, desk.out, t);
    secs[t] = seconds_since(t0);
  }
  cnn::CheckpointInfo diff_info, scene_info;
  cnn::load_checkpoint(desk.out.checkpoint(Track::kDiff), &diff_info);
  cnn::load_checkpoint(desk.out.checkpoint(Track::kScene), &scene_info);
  report(3, diff_info.test_accuracy >= kMinAccuracy && scene_info.test_accuracy >= kMinAccuracy &&
                secs[Track::kDiff] < kMaxTrainSeconds && secs[Track::kScene] < kMaxTrainSeconds,
         fmt::format("5-class desk benchmark (2000/500 per track): diff test acc {:.3f} in {:.0f} s, scene test acc "
                     "{:.3f} in {:.0f} s",
                     diff_info.test_accuracy, secs[Track::kDiff], scene_info.test_accuracy, secs[Track::kScene]));

  step_targets(desk.cfg, desk.out);
  for (Variant v : desk.cfg.attacks.variants) step_attack(desk.cfg, desk.out, v);
  step_diagnose_subsets(desk.cfg, desk.out);
  step_reconstruct(desk.cfg, desk.out);
  step_defend(desk.cfg, desk.out);
  desk.rows = step_report(desk.cfg, desk.out);
  return desk;
}

std::string rate(const ReportRow& r) {
  return fmt::format("{} {:.1f}% ({}/{}, p {})", variant_name(r.variant), r.summary.success_rate,
                     r.summary.successes, r.summary.applicable,
                     r.summary.mean_perceptibility ? fmt::format("{:.4f}", *r.summary.mean_perceptibility) : "n/a");
}

void image_vs_physical(const Desk& desk) {
  const ReportRow& image = row_of(desk, Variant::kImage);
  const ReportRow& combined = row_of(desk, Variant::kCombined);
  const bool enough = image.summary.applicable >= kMinTargets && combined.summary.applicable >= kMinTargets;
  const bool ordered = image.summary.success_rate >= combined.summary.success_rate + kMinImageMargin;
  const bool p_ordered = image.summary.mean_perceptibility && combined.summary.mean_perceptibility &&
                         *image.summary.mean_perceptibility < *combined.summary.mean_perceptibility;
  report(4, enough && ordered && p_ordered, fmt::format("{} vs {}", rate(image), rate(combined)));
}

void per_factor(const Desk& desk) {
  const ReportRow& n = row_of(desk, Variant::kSurfaceNormal);
  const ReportRow& l = row_of(desk, Variant::kIllumination);
  const ReportRow& m = row_of(desk, Variant::kMaterial);
  report(5, n.summary.success_rate >= l.summary.success_rate && n.summary.success_rate >= m.summary.success_rate,
         fmt::format("{}; {}; {}", rate(n), rate(l), rate(m)));
}

void zoo_richardson() {
  double lo = INFINITY, hi = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const testing::RichardsonReport r = testing::zoo_richardson(seed, 20);
    lo = std::min(lo, r.ratio());
    hi = std::max(hi, r.ratio());
    coords += r.coordinates;
  }
  report(6, lo >= kRichardsonLow && hi <= kRichardsonHigh,
         fmt::format("ZOO estimate error ratio delta=1e-2 vs 1e-3 in [{:.1f}, {:.1f}] over 5 scenes ({} coordinates)",
                     lo, hi, coords));
}

void zoo_black_box(const Desk& desk) {
  const ReportRow& zoo = row_of(desk, Variant::kSceneZoo);
  const ReportRow& img = row_of(desk, Variant::kSceneImage);
  const attack::AttackConfig& z = desk.cfg.attacks.zoo;
  const bool pass = zoo.summary.success_rate > 0.0 && zoo.summary.success_rate < img.summary.success_rate &&
                    z.max_iterations == 500 && z.lambda == 0.1 && z.delta == 1e-4;
  report(7, pass, fmt::format("{} vs {}", rate(zoo), rate(img)));
  double most = 0.0, least = 1.0;
  for (const Target& t : load_targets(desk.out.targets(Track::kScene))) {
    most = std::max(most, 1.0 - t.confidence);
    least = std::min(least, 1.0 - t.confidence);
  }
  note(fmt::format("ZOO target set: 1 - Z_c' ranges over [{:.2e}, {:.2e}]", least, most));
}

void truncation_suite(const Desk& desk) {
  const auto targets = load_targets(desk.out.targets(Track::kDiff));
  const cnn::ClassifierParams params = cnn::load_checkpoint(desk.out.checkpoint(Track::kDiff));
  const std::size_t n = std::min(kTruncationAttacks, targets.size());
  const double bound = desk.cfg.attacks.fgsm.truncation + kTruncationSlack;
  double worst = 0.0;
  std::size_t observed = 0, max_trunc = 0, trunc_sum = 0, trace_sum = 0;
  bool traced = true;
  for (std::size_t i = 0; i < n; ++i) {
    const Image y0 = clean_image(targets[i], desk.cfg.dataset);
    auto observe = [&](std::size_t, const Image& y) {
      worst = std::max(worst, numkit::max_abs((y - y0).tensor()));
      ++observed;
    };
    const attack::AttackResult r = run_attack(Variant::kCombined, targets[i], desk.cfg, params, observe);
    traced = traced && r.truncation_trace.size() == r.confidence_trace.size();
    for (std::size_t c : r.truncation_trace) {
      max_trunc = std::max(max_trunc, c);
      trunc_sum += c;
    }
    trace_sum += r.truncation_trace.size();
  }
  report(8, n == kTruncationAttacks && traced && worst <= bound,
         fmt::format("{} physical attacks, {} iterations observed: max |Y_t - Y0|_inf {:.6f} <= {:.6f}", n, observed,
                     worst, bound));
  note(fmt::format("truncated pixels per iteration: mean {:.1f}, max {} of {} pixels",
                   trace_sum ? static_cast<double>(trunc_sum) / static_cast<double>(trace_sum) : 0.0, max_trunc,
                   cnn::kInputSize * cnn::kInputSize));
}

void reconstruction_and_defense(const Desk& desk) {
  // (a) Realizable targets from the diff-track test split.
  const auto targets = load_targets(desk.out.targets(Track::kDiff));
  const cnn::ClassifierParams params = cnn::load_checkpoint(desk.out.checkpoint(Track::kDiff));
  double worst_ratio = 0.0;
  std::size_t planted = 0;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, targets.size()); ++i) {
    const diffrender::PhysicalScene x0 = physical_scene_for(targets[i].record, desk.cfg.dataset);
    Rng rng(derive_seed(5, i));
    diffrender::PhysicalParams d = diffrender::PhysicalParams::zeros_like(x0);
    for (double& v : d.normals.data()) v = rng.uniform(-0.03, 0.03);
    for (double& v : d.light.data()) v = rng.uniform(-0.02, 0.02);
    for (double& v : d.material.data()) v = rng.uniform(-0.02, 0.02);
    const Image y = diffrender::render(diffrender::apply_delta(x0, d));
    const auto r = interpret::reconstruct_physical(x0, y, desk.cfg.reconstruct.defense, params,
                                                   targets[i].record.label, targets[i].record.label);
    worst_ratio = std::max(worst_ratio, r.final_l1 / r.loss_curve.front());
    ++planted;
  }
  report(9, planted == 3 && worst_ratio <= kMaxPlantedRatio,
         fmt::format("(a) planted physical perturbations on {} dataset scenes: final/initial l1 at most {:.3f}",
                     planted, worst_ratio));

  // (b) Re-render defense on the campaign's image-space adversaries.
  std::ifstream in(desk.out.report() / "defense.csv");
  std::string line;
  std::getline(in, line);
  std::size_t total = 0, reverted = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    reverted += line.ends_with(",reverted_to_true");
  }
  const double frac = total ? static_cast<double>(reverted) / static_cast<double>(total) : 0.0;
  report(9, total >= kMinDefenseAdversaries && frac > kMinReversion,
         fmt::format("(b) re-render defense reverts {}/{} image-space adversaries ({:.1f}%)", reverted, total,
                     100.0 * frac));

  std::ifstream rc(desk.out.report() / "reconstruct.csv");
  std::getline(rc, line);
  std::size_t fits = 0, marginal = 0;
  while (std::getline(rc, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ++fits;
    marginal += std::stod(cells.at(6)) < 0.20;
  }
  note(fmt::format("best-of-grid reconstructions of image adversaries with < 20% l1 drop: {}/{}", marginal, fits));
}

// Runs the CLI in-process with its table output discarded.
int quiet_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"physadv"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  const int code = cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(saved);
  return code;
}

void determinism(const fs::path& dir) {
  const fs::path cfg = dir / "tiny.ini";
  fs::create_directories(dir);
  std::ofstream(cfg) << "[run]\nseed = 11\n\n[dataset]\nclasses = sphere,cube\ntrain_per_class = 15\n"
                        "test_per_class = 10\n\n[train]\nepochs = 4\nbatch_size = 10\n\n[targets]\nper_class = 2\n\n"
                        "[attack]\nfgsm_max_iterations = 40\nzoo_max_iterations = 30\n\n[reconstruct]\n"
                        "max_iterations = 30\nmax_targets = 2\n";
  auto run = [&](const fs::path& out, const std::string& jobs) {
    fs::remove_all(out);
    return quiet_cli({"campaign", "--config", cfg.string(), "--out", out.string(), "--jobs", jobs});
  };
  const int a = run(dir / "a", "1");
  const int b = run(dir / "b", "4");
  const auto ta = tree(dir / "a"), tb = tree(dir / "b");
  // Repeating a single step over an existing tree rewrites identical bytes.
  const int c = quiet_cli({"report", "--config", cfg.string(), "--out", (dir / "a").string()});
  report(10, a == 0 && b == 0 && c == 0 && !ta.empty() && ta == tb && tree(dir / "a") == ta,
         fmt::format("tiny campaign twice (jobs 1 and 4) plus a repeated report: {} files, trees {}", ta.size(),
                     ta == tb ? "byte-identical" : "differ"));
}

void perceptibility_identities() {
  Rng rng(31);
  const Image zero(32, 32);
  const bool p0 = numkit::perceptibility_image(zero).value == 0.0;
  double uniform_err = 0.0, homog_err = 0.0;
  for (double eps : {1e-3, 0.05, 0.5, -0.2}) {
    const Image u(32, 32, eps);
    uniform_err = std::max(uniform_err, std::abs(numkit::perceptibility_image(u).value - std::abs(eps) * std::sqrt(3.0)));
  }
  for (int trial = 0; trial < 20; ++trial) {
    Image d(16, 12);
    for (double& v : d.data()) v = rng.uniform(-0.3, 0.3);
    const double c = rng.uniform(-4.0, 4.0);
    const double p = numkit::perceptibility_image(d).value;
    const double pc = numkit::perceptibility_image(Image(d.tensor() * c)).value;
    homog_err = std::max(homog_err, std::abs(pc - std::abs(c) * p));
  }
  report(11, p0 && uniform_err <= kIdentityTolerance && homog_err <= kIdentityTolerance,
         fmt::format("p(0) = 0: {}; max |p(eps) - eps sqrt 3| {:.1e}; max homogeneity error {:.1e}", p0 ? "yes" : "no",
                     uniform_err, homog_err));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--jobs" && i + 1 < argc) {
      jobs = std::stoul(argv[++i]);
    } else {
      work = a;
    }
  }
  const auto t0 = Clock::now();
  try {
    renderer_gradients();
    classifier_gradients();
    const Desk desk = desk_campaign(work / "desk", jobs);
    image_vs_physical(desk);
    per_factor(desk);
    zoo_richardson();
    zoo_black_box(desk);
    truncation_suite(desk);
    reconstruction_and_defense(desk);
    determinism(work / "determinism");
    perceptibility_identities();
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria line(s) failed; total %.0f s\n", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
