#include "physadv/dataset.hpp"

#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "physadv/parallel.hpp"
#include "physadv/rng.hpp"

namespace physadv::harness {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kViewExtent = 0.4;
constexpr double kViewJitter = 0.04;
constexpr const char* kManifestHeader = "track,split,index,label,class,seed,file";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string_view track_name(Track track) { return track == Track::kDiff ? "diff" : "scene"; }

Track parse_track(std::string_view name) {
  if (name == "diff") return Track::kDiff;
  if (name == "scene") return Track::kScene;
  throw std::invalid_argument(fmt::format("unknown track '{}'", name));
}

std::string_view split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument(fmt::format("unknown split '{}'", name));
}

std::vector<std::string> DatasetSpec::class_names() const {
  std::vector<std::string> names;
  for (scene::ShapeClass c : classes) names.emplace_back(scene::shape_name(c));
  return names;
}

std::string SampleRecord::file() const {
  return fmt::format("{}/{}/{:05d}.ppm", track_name(track), split_name(split), index);
}

diffrender::PhysicalScene sample_physical_scene(scene::ShapeClass shape, std::uint64_t seed,
                                                std::size_t light_width, std::size_t light_height) {
  using namespace diffrender;
  Rng rng(derive_seed(seed, "physical-scene"));
  std::array<double, 3> rotation{};
  for (double& r : rotation) r = rng.uniform(0.0, std::numbers::pi);
  const double ox = rng.uniform(-kViewJitter, kViewJitter), oy = rng.uniform(-kViewJitter, kViewJitter);
  const scene::NormalBuffer buf =
      scene::orthographic_normals(shape, rotation, ox, oy, kViewExtent, scene::kResolution);

  PhysicalScene s;
  s.normals = NormalMap(buf.width, buf.height);
  s.mask = Tensor({buf.height, buf.width});
  for (std::size_t y = 0; y < buf.height; ++y) {
    for (std::size_t x = 0; x < buf.width; ++x) {
      const std::size_t i = y * buf.width + x;
      double az = 0.0, polar = 0.0;
      normal_to_angles(buf.normals[i], az, polar);
      s.normals.set(x, y, az, polar);
      s.mask[i] = buf.mask[i] ? 1.0 : 0.0;
    }
  }

  s.light = EnvironmentLight(light_width, light_height);
  const double base = rng.uniform(0.05, 0.15);
  const std::size_t blobs = 1 + rng.index(2);
  std::vector<Vec3> centers;
  std::vector<double> gains, widths;
  for (std::size_t b = 0; b < blobs; ++b) {
    // Key lights sit on the viewer's hemisphere.
    centers.push_back(angles_to_normal(rng.uniform(0.0, kTwoPi), rng.uniform(0.1, 0.8)));
    gains.push_back(rng.uniform(0.5, 1.5) / static_cast<double>(blobs));
    widths.push_back(rng.uniform(0.4, 0.8));
  }
  for (std::size_t i = 0; i < light_height; ++i) {
    for (std::size_t j = 0; j < light_width; ++j) {
      const Vec3 d = light_direction(i, j, light_width, light_height);
      double v = base * rng.uniform(0.8, 1.2);
      for (std::size_t b = 0; b < blobs; ++b) {
        const double ang = std::acos(std::clamp(dot(d, centers[b]), -1.0, 1.0)) / widths[b];
        // Gain is the blob's approximate irradiance at normal incidence.
        v += gains[b] / (kTwoPi * widths[b] * widths[b]) * std::exp(-0.5 * ang * ang);
      }
      s.light.radiance[i * light_width + j] = v;
    }
  }

  Tensor mat({2, kLobeParams});
  for (std::size_t c = 0; c < 3; ++c) mat[c] = rng.uniform(0.2, 0.55);
  const double spec = rng.uniform(0.05, 0.2);
  for (std::size_t c = 0; c < 3; ++c) mat[kLobeParams + c] = spec * rng.uniform(0.9, 1.1);
  mat[kLobeParams + 3] = std::log(rng.uniform(5.0, 40.0));
  s.material = Material(std::move(mat), {LobeKind::kDiffuse, LobeKind::kSpecular});
  enforce_invariants(s);
  s.validate();
  return s;
}

std::vector<SampleRecord> plan_dataset(const DatasetSpec& spec) {
  if (spec.classes.size() < 2) throw std::invalid_argument("dataset needs at least two classes");
  const std::uint64_t root = derive_seed(spec.seed, "dataset");
  std::vector<SampleRecord> records;
  for (Track track : {Track::kDiff, Track::kScene}) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      const std::size_t per_class = split == Split::kTrain ? spec.train_per_class : spec.test_per_class;
      const std::uint64_t branch = derive_seed(root, fmt::format("{}/{}", track_name(track), split_name(split)));
      for (std::size_t i = 0; i < per_class * spec.classes.size(); ++i) {
        SampleRecord r;
        r.track = track;
        r.split = split;
        r.index = i;
        r.label = i % spec.classes.size();
        r.shape = spec.classes[r.label];
        r.seed = derive_seed(branch, i);
        records.push_back(r);
      }
    }
  }
  return records;
}

diffrender::PhysicalScene physical_scene_for(const SampleRecord& record, const DatasetSpec& spec) {
  if (record.track != Track::kDiff) throw std::invalid_argument("physical_scene_for: not a diff-track record");
  return sample_physical_scene(record.shape, record.seed, spec.light_width, spec.light_height);
}

scene::BlackBoxScene black_box_scene_for(const SampleRecord& record) {
  if (record.track != Track::kScene) throw std::invalid_argument("black_box_scene_for: not a scene-track record");
  return scene::sample_scene(record.shape, record.seed);
}

Image render_record(const SampleRecord& record, const DatasetSpec& spec) {
  if (record.track == Track::kDiff) return diffrender::render(physical_scene_for(record, spec));
  return scene::render_scene(black_box_scene_for(record));
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, std::size_t jobs) {
  const std::vector<SampleRecord> records = plan_dataset(spec);
  for (Track track : {Track::kDiff, Track::kScene}) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      std::filesystem::create_directories(dir / track_name(track) / split_name(split));
    }
  }
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    save_ppm(dir / records[i].file(), render_record(records[i], spec));
  });
  std::ofstream out(dir / "manifest.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  out << kManifestHeader << '\n';
  for (const SampleRecord& r : records) {
    out << fmt::format("{},{},{},{},{},{},{}\n", track_name(r.track), split_name(r.split), r.index, r.label,
                       scene::shape_name(r.shape), r.seed, r.file());
  }
  if (!out) throw std::runtime_error("failed writing the dataset manifest");
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.csv").string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw std::runtime_error("dataset manifest has an unexpected header");
  }
  std::vector<SampleRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw std::runtime_error("malformed manifest row: " + line);
    SampleRecord r;
    r.track = parse_track(cells[0]);
    r.split = parse_split(cells[1]);
    r.index = std::stoull(cells[2]);
    r.label = std::stoull(cells[3]);
    r.shape = scene::parse_shape(cells[4]);
    r.seed = std::stoull(cells[5]);
    if (r.file() != cells[6]) throw std::runtime_error("manifest file column disagrees with the record: " + line);
    records.push_back(r);
  }
  return records;
}

std::vector<SampleRecord> select(const std::vector<SampleRecord>& records, Track track, Split split) {
  std::vector<SampleRecord> out;
  for (const SampleRecord& r : records) {
    if (r.track == track && r.split == split) out.push_back(r);
  }
  return out;
}

cnn::Dataset load_images(const std::vector<SampleRecord>& records, const DatasetSpec& spec, std::size_t jobs) {
  cnn::Dataset data(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    data[i] = cnn::LabeledImage{render_record(records[i], spec), records[i].label};
  });
  return data;
}

}  // namespace physadv::harness
