#pragma once

// Experiment orchestration: config files, target sets, attack campaigns,
// reports, subset diagnostics, reconstruction and the re-render defense.
// Every step reads and writes the directory layout below, so steps can be
// run separately from the command line or chained by run_campaign.
//
//   out/dataset/        manifest.csv and PPM previews
//   out/ckpt/<track>/   classifier checkpoints
//   out/targets/        <track>.csv
//   out/attacks/<variant>/<target-id>/
//   out/reconstruct/<target-id>/
//   out/report/         table.csv, curves/, subsets/, reconstruct.csv, defense.csv

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "physadv/attack.hpp"
#include "physadv/cnn.hpp"
#include "physadv/dataset.hpp"
#include "physadv/interpret.hpp"

namespace physadv::harness {

enum class Variant : std::uint8_t {
  kImage,          // image FGSM on the diff track
  kSurfaceNormal,  // physical FGSM on normals
  kIllumination,   // physical FGSM on the environment light
  kMaterial,       // physical FGSM on the material
  kCombined,       // physical FGSM on all three sets
  kSceneImage,     // image FGSM on the scene track
  kSceneZoo,       // ZOO through the rasterizer
};

inline constexpr std::array<Variant, 7> kAllVariants = {Variant::kImage,        Variant::kSurfaceNormal,
                                                        Variant::kIllumination, Variant::kMaterial,
                                                        Variant::kCombined,     Variant::kSceneImage,
                                                        Variant::kSceneZoo};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
Track variant_track(Variant v);

struct AttackPlan {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  attack::AttackConfig fgsm = attack::AttackConfig::defaults(attack::Mode::kImageFgsm);
  attack::AttackConfig zoo = attack::AttackConfig::defaults(attack::Mode::kZoo);
};

struct ReconstructPlan {
  std::vector<interpret::ReconstructConfig> grid = interpret::reconstruction_grid();
  interpret::ReconstructConfig defense;
  // Upper bound on reconstructed adversaries; 0 means all of them.
  std::size_t max_targets = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  DatasetSpec dataset;
  cnn::TrainConfig train;
  std::size_t targets_per_class = 6;
  AttackPlan attacks;
  ReconstructPlan reconstruct;

  // INI sections [run] [dataset] [train] [targets] [attack] [reconstruct];
  // missing keys keep their defaults, unknown keys are errors.
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void validate() const;
  // Seeds of the dataset and of both classifiers follow the run seed.
  void set_seed(std::uint64_t seed);
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Layout {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path checkpoint(Track t) const { return root / "ckpt" / std::string(track_name(t)); }
  std::filesystem::path targets(Track t) const { return root / "targets" / (std::string(track_name(t)) + ".csv"); }
  std::filesystem::path attacks(Variant v) const { return root / "attacks" / std::string(variant_name(v)); }
  std::filesystem::path attack(Variant v, const std::string& id) const { return attacks(v) / id; }
  std::filesystem::path reconstruction(const std::string& id) const { return root / "reconstruct" / id; }
  std::filesystem::path report() const { return root / "report"; }
};

struct Target {
  std::string id;  // "<track>-<index>"
  SampleRecord record;
  double confidence = 0.0;
};

// Correctly classified items with the top n confidences of each class, in
// class order and by non-increasing confidence within a class. Classes with
// fewer than n correct items contribute what they have; a note is appended
// to `notes` for each of them.
std::vector<Target> build_target_set(const std::vector<SampleRecord>& test, const cnn::Dataset& images,
                                     const cnn::ClassifierParams& params, std::size_t classes,
                                     std::size_t per_class, std::vector<std::string>* notes = nullptr);

void save_targets(const std::filesystem::path& path, const std::vector<Target>& targets);
std::vector<Target> load_targets(const std::filesystem::path& path);

// Clean classifier input of a target.
Image clean_image(const Target& t, const DatasetSpec& spec);

attack::AttackResult run_attack(Variant v, const Target& t, const ExperimentConfig& cfg,
                                const cnn::ClassifierParams& params, const attack::Observer& observe = {});

struct SubsetRow {
  scene::GroupSet groups;
  double confidence = 0.0;  // Z_{c'}
  std::size_t prediction = 0;
};

// Applies dX restricted to each of the 16 parameter-group subsets; row i
// uses GroupSet(i).
std::vector<SubsetRow> subset_diagnostic(const scene::BlackBoxScene& x0, const scene::SceneVector& delta,
                                         const cnn::ClassifierParams& params, std::size_t target);

struct ReportRow {
  Variant variant = Variant::kImage;
  std::size_t targets = 0;
  attack::SuccessSummary summary;
};

struct CurvePoint {
  double confidence = 0.0;
  double log_advantage = 0.0;
  double distance = 0.0;
  std::size_t active = 0;  // attacks still running at this iteration
};

// Mean traces over applicable results; an attack that stopped early holds
// its last value. One point per iteration up to the longest run.
std::vector<CurvePoint> mean_curve(const std::vector<attack::AttackResult>& results);

// Pipeline steps. Each logs progress to stderr and writes only below the
// layout root.
void step_gen_data(const ExperimentConfig& cfg, const Layout& out);
// Without `only`, trains the tracks the configured variants use.
void step_train(const ExperimentConfig& cfg, const Layout& out, std::optional<Track> only = std::nullopt);
void step_targets(const ExperimentConfig& cfg, const Layout& out);
void step_attack(const ExperimentConfig& cfg, const Layout& out, Variant v,
                 const std::optional<std::string>& target_id = std::nullopt);
void step_diagnose_subsets(const ExperimentConfig& cfg, const Layout& out);
void step_reconstruct(const ExperimentConfig& cfg, const Layout& out);
void step_defend(const ExperimentConfig& cfg, const Layout& out);
std::vector<ReportRow> step_report(const ExperimentConfig& cfg, const Layout& out);

// Everything from dataset generation to the report.
std::vector<ReportRow> run_campaign(const ExperimentConfig& cfg, const Layout& out);

// Command-line entry point: 0 on success, 1 on usage errors, 2 on failures.
int cli(int argc, const char* const* argv);

}  // namespace physadv::harness
