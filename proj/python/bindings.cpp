// Python bindings for the renderers, classifier, attacks and harness CLI.
// Images cross the boundary as float64 arrays of shape (height, width, 3).

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "physadv/attack.hpp"
#include "physadv/harness.hpp"
#include "physadv/interpret.hpp"
#include "physadv/numkit.hpp"

namespace py = pybind11;
using namespace physadv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const numkit::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

numkit::Tensor to_tensor(const Array& a) {
  numkit::Shape shape(a.shape(), a.shape() + a.ndim());
  return numkit::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Image to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("image must have shape (height, width, 3)");
  return Image(to_tensor(a));
}

py::dict result_dict(const attack::AttackResult& r) {
  py::dict d;
  d["applicable"] = r.applicable;
  d["success"] = r.success;
  d["iterations_used"] = r.iterations_used;
  d["delta_x"] = to_array(r.delta_x);
  d["delta_y"] = to_array(r.delta_y.tensor());
  d["perceptibility"] = r.perceptibility;
  d["true_class"] = r.true_class;
  d["final_prediction"] = r.final_prediction;
  d["confidence_trace"] = r.confidence_trace;
  d["truncation_trace"] = r.truncation_trace;
  d["log_advantage_trace"] = r.log_advantage_trace;
  d["distance_trace"] = r.distance_trace;
  d["renders"] = r.renders;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial attacks beyond the image space: native core";

  m.def("perceptibility", [](const Array& delta) { return numkit::perceptibility_image(to_image(delta)).value; },
        py::arg("delta_image"), "Root-mean over pixels of the RGB perturbation norm.");

  // Differentiable renderer.
  py::class_<diffrender::PhysicalScene>(m, "PhysicalScene")
      .def_property(
          "normals", [](const diffrender::PhysicalScene& s) { return to_array(s.normals.angles); },
          [](diffrender::PhysicalScene& s, const Array& a) { s.normals = diffrender::NormalMap(to_tensor(a)); })
      .def_property(
          "light", [](const diffrender::PhysicalScene& s) { return to_array(s.light.radiance); },
          [](diffrender::PhysicalScene& s, const Array& a) { s.light = diffrender::EnvironmentLight(to_tensor(a)); })
      .def_property(
          "material", [](const diffrender::PhysicalScene& s) { return to_array(s.material.params); },
          [](diffrender::PhysicalScene& s, const Array& a) {
            s.material = diffrender::Material(to_tensor(a), s.material.kinds);
          })
      .def_property_readonly("mask", [](const diffrender::PhysicalScene& s) { return to_array(s.mask); })
      .def_property_readonly("width", &diffrender::PhysicalScene::width)
      .def_property_readonly("height", &diffrender::PhysicalScene::height)
      .def("render", [](const diffrender::PhysicalScene& s) { return to_array(diffrender::render(s).tensor()); })
      .def(
          "render_backward",
          [](const diffrender::PhysicalScene& s, const Array& upstream) {
            const diffrender::PhysicalParams g = diffrender::render_backward(s, to_image(upstream));
            return py::make_tuple(to_array(g.normals), to_array(g.light), to_array(g.material));
          },
          py::arg("upstream"), "Gradients of <upstream, render(X)> for (normals, light, material).")
      .def("validate", &diffrender::PhysicalScene::validate);
  m.def("random_scene", &diffrender::random_scene, py::arg("width"), py::arg("height"), py::arg("light_width"),
        py::arg("light_height"), py::arg("seed"));

  // Black-box rasterizer.
  m.attr("SCENE_DIMS") = scene::kSceneDims;
  m.attr("SHAPES") = [] {
    std::vector<std::string> names;
    for (scene::ShapeClass s : scene::kAllShapes) names.emplace_back(scene::shape_name(s));
    return names;
  }();
  py::class_<scene::BlackBoxScene>(m, "BlackBoxScene")
      .def_property_readonly("shape", [](const scene::BlackBoxScene& s) { return std::string(scene::shape_name(s.shape)); })
      .def("to_vector", [](const scene::BlackBoxScene& s) {
        const scene::SceneVector v = s.to_vector();
        return std::vector<double>(v.begin(), v.end());
      })
      .def_static(
          "from_vector",
          [](const std::string& shape, const std::vector<double>& v) {
            if (v.size() != scene::kSceneDims) throw py::value_error("scene vectors have 14 entries");
            scene::SceneVector a{};
            std::copy(v.begin(), v.end(), a.begin());
            scene::BlackBoxScene s = scene::BlackBoxScene::from_vector(scene::parse_shape(shape), a);
            scene::enforce_invariants(s);
            return s;
          },
          py::arg("shape"), py::arg("vector"))
      .def("render", [](const scene::BlackBoxScene& s) { return to_array(scene::render_scene(s).tensor()); })
      .def("__eq__", [](const scene::BlackBoxScene& a, const scene::BlackBoxScene& b) { return a == b; });
  m.def(
      "sample_scene", [](const std::string& shape, std::uint64_t seed) {
        return scene::sample_scene(scene::parse_shape(shape), seed);
      },
      py::arg("shape"), py::arg("seed"));

  // Classifier.
  py::class_<cnn::ClassifierParams>(m, "Classifier")
      .def_static("kaiming", &cnn::ClassifierParams::kaiming, py::arg("classes"), py::arg("seed"))
      .def_static(
          "load", [](const std::filesystem::path& dir) { return cnn::load_checkpoint(dir); }, py::arg("directory"))
      .def_property_readonly("classes", &cnn::ClassifierParams::classes)
      .def(
          "posterior", [](const cnn::ClassifierParams& p, const Array& img) { return cnn::forward(to_image(img), p).probs; },
          py::arg("image"))
      .def(
          "predict", [](const cnn::ClassifierParams& p, const Array& img) { return cnn::forward(to_image(img), p).argmax(); },
          py::arg("image"))
      .def(
          "input_gradient",
          [](const cnn::ClassifierParams& p, const Array& img, const std::vector<double>& upstream) {
            const Image x = to_image(img);
            cnn::ForwardCache cache;
            cnn::forward(x, p, &cache);
            return to_array(cnn::backward_input(x, p, upstream, cache).tensor());
          },
          py::arg("image"), py::arg("upstream"), "Gradient of <upstream, Z> with respect to the pixels.");

  // Attacks.
  py::class_<attack::AttackConfig>(m, "AttackConfig")
      .def(py::init([](const std::string& mode) { return attack::AttackConfig::defaults(attack::parse_mode(mode)); }),
           py::arg("mode") = "image_fgsm")
      .def_property_readonly("mode", [](const attack::AttackConfig& c) { return std::string(attack::mode_name(c.mode)); })
      .def_readwrite("eta", &attack::AttackConfig::eta)
      .def_readwrite("max_iterations", &attack::AttackConfig::max_iterations)
      .def_readwrite("truncation", &attack::AttackConfig::truncation)
      .def_readwrite("delta", &attack::AttackConfig::delta)
      .def_readwrite("lambda_", &attack::AttackConfig::lambda)
      .def_readwrite("coord_batch", &attack::AttackConfig::coord_batch)
      .def_readwrite("seed", &attack::AttackConfig::seed)
      .def_property(
          "physical_eta",
          [](const attack::AttackConfig& c) {
            return py::make_tuple(c.physical_eta.normals, c.physical_eta.light, c.physical_eta.material);
          },
          [](attack::AttackConfig& c, std::tuple<double, double, double> v) {
            c.physical_eta = {std::get<0>(v), std::get<1>(v), std::get<2>(v)};
          });

  m.def(
      "fgsm_image",
      [](const Array& y0, std::size_t target, const cnn::ClassifierParams& p, const attack::AttackConfig& cfg) {
        return result_dict(attack::fgsm_attack_image(to_image(y0), target, p, cfg));
      },
      py::arg("image"), py::arg("target"), py::arg("classifier"), py::arg("config"));
  m.def(
      "fgsm_physical",
      [](const diffrender::PhysicalScene& x0, std::size_t target, const cnn::ClassifierParams& p,
         const attack::AttackConfig& cfg, bool normals, bool light, bool material) {
        return result_dict(attack::fgsm_attack_physical(x0, target, p, cfg, {normals, light, material}));
      },
      py::arg("scene"), py::arg("target"), py::arg("classifier"), py::arg("config"), py::arg("normals") = true,
      py::arg("light") = true, py::arg("material") = true);
  m.def(
      "zoo_scene",
      [](const scene::BlackBoxScene& x0, std::size_t target, const cnn::ClassifierParams& p,
         const attack::AttackConfig& cfg) { return result_dict(attack::zoo_attack_scene(x0, target, p, cfg)); },
      py::arg("scene"), py::arg("target"), py::arg("classifier"), py::arg("config"));

  // Interpretation.
  m.def(
      "rerender_defense",
      [](const diffrender::PhysicalScene& x0, const Array& y_adv, const cnn::ClassifierParams& p,
         std::size_t max_iterations, double learning_rate) {
        interpret::ReconstructConfig cfg;
        cfg.max_iterations = max_iterations;
        cfg.learning_rate = learning_rate;
        return interpret::rerender_defense(x0, to_image(y_adv), p, cfg);
      },
      py::arg("scene"), py::arg("adversarial_image"), py::arg("classifier"), py::arg("max_iterations") = 500,
      py::arg("learning_rate") = 1e-4);
  m.def(
      "reconstruction_curve",
      [](const diffrender::PhysicalScene& x0, const Array& target, std::size_t max_iterations, const std::string& opt,
         double learning_rate) {
        interpret::ReconstructConfig cfg;
        cfg.optimizer = interpret::parse_optimizer(opt);
        cfg.max_iterations = max_iterations;
        cfg.learning_rate = learning_rate;
        return interpret::fit_physical(x0, to_image(target), cfg).loss_curve;
      },
      py::arg("scene"), py::arg("target_image"), py::arg("max_iterations") = 500, py::arg("optimizer") = "adam",
      py::arg("learning_rate") = 1e-4);

  // Harness.
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv = {"physadv"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return harness::cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
