#pragma once

// Balanced two-track datasets of primitive renders. Every sample is fully
// determined by its seed, so the manifest is the dataset; the PPM files are
// 8-bit previews and float images are regenerated when loading.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "physadv/cnn.hpp"
#include "physadv/render_diff.hpp"
#include "physadv/render_scene.hpp"

namespace physadv::harness {

// kDiff samples are PhysicalScenes rendered by the differentiable renderer;
// kScene samples are BlackBoxScenes rendered by the rasterizer.
enum class Track : std::uint8_t { kDiff, kScene };
enum class Split : std::uint8_t { kTrain, kTest };

std::string_view track_name(Track track);
Track parse_track(std::string_view name);
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct DatasetSpec {
  std::vector<scene::ShapeClass> classes{scene::kAllShapes.begin(), scene::kAllShapes.end()};
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 100;
  std::size_t light_width = 16;
  std::size_t light_height = 8;
  std::uint64_t seed = 0;

  std::vector<std::string> class_names() const;
};

struct SampleRecord {
  Track track = Track::kDiff;
  Split split = Split::kTrain;
  std::size_t index = 0;  // position within (track, split)
  std::size_t label = 0;  // index into DatasetSpec::classes
  scene::ShapeClass shape = scene::ShapeClass::kSphere;
  std::uint64_t seed = 0;

  std::string file() const;  // relative to the dataset directory
};

// Random PhysicalScene of a primitive: orthographic normal buffer of a
// randomly rotated mesh, blob environment light from the viewer's side, and
// one diffuse plus one specular lobe.
diffrender::PhysicalScene sample_physical_scene(scene::ShapeClass shape, std::uint64_t seed,
                                                std::size_t light_width, std::size_t light_height);

// Classes are interleaved, so every prefix of k * classes records is balanced.
std::vector<SampleRecord> plan_dataset(const DatasetSpec& spec);

diffrender::PhysicalScene physical_scene_for(const SampleRecord& record, const DatasetSpec& spec);
scene::BlackBoxScene black_box_scene_for(const SampleRecord& record);
Image render_record(const SampleRecord& record, const DatasetSpec& spec);

// manifest.csv plus one PPM per record.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::size_t jobs);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& dir);

std::vector<SampleRecord> select(const std::vector<SampleRecord>& records, Track track, Split split);
cnn::Dataset load_images(const std::vector<SampleRecord>& records, const DatasetSpec& spec,
                         std::size_t jobs);

}  // namespace physadv::harness
