#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dla/adapt.hpp"
#include "dla/config.hpp"
#include "dla/consensus.hpp"
#include "dla/ema.hpp"
#include "dla/geometry.hpp"
#include "dla/losses.hpp"
#include "dla/synthdocs.hpp"

namespace py = pybind11;
using namespace dla;

namespace {

py::array_t<double> to_numpy(const Image& img) {
  py::array_t<double> arr({img.height(), img.width(), img.channels()});
  auto v = arr.mutable_unchecked<3>();
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) v(y, x, c) = img.at(c, y, x);
  return arr;
}

Image from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw ContractViolation("image must be an H x W x C array");
  auto v = arr.unchecked<3>();
  Image img(static_cast<int>(v.shape(2)), static_cast<int>(v.shape(0)), static_cast<int>(v.shape(1)));
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) img.at(c, y, x) = v(y, x, c);
  return img;
}

ModelParameters flat_params(const std::vector<double>& v) {
  Tensor t({static_cast<int>(v.size())});
  t.values = v;
  return ModelParameters({{"w", t}});
}

std::map<std::string, std::string> key_defaults(const auto& keys, const auto& defaults) {
  std::map<std::string, std::string> out;
  for (const auto& k : keys) out[k.key] = k.get(defaults);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the dladapter C++ core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<IngestionError>(m, "IngestionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_ValueError);

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("x_min"), py::arg("y_min"), py::arg("x_max"),
           py::arg("y_max"))
      .def_readwrite("x_min", &Box::x_min)
      .def_readwrite("y_min", &Box::y_min)
      .def_readwrite("x_max", &Box::x_max)
      .def_readwrite("y_max", &Box::y_max)
      .def_property_readonly("area", &Box::area)
      .def("__eq__", [](const Box& a, const Box& b) { return a == b; })
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " + std::to_string(b.x_max) +
               ", " + std::to_string(b.y_max) + ")";
      });

  py::class_<Detection>(m, "Detection")
      .def(py::init([](Box box, int category, double score, std::vector<double> soft) {
             return Detection{box, category, score, std::move(soft)};
           }),
           py::arg("box"), py::arg("category"), py::arg("score"), py::arg("soft_label"))
      .def_readwrite("box", &Detection::box)
      .def_readwrite("category", &Detection::category)
      .def_readwrite("score", &Detection::score)
      .def_readwrite("soft_label", &Detection::soft_label);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def(
      "nms",
      [](const std::vector<Detection>& dets, double thr, bool per_category) {
        return nms(DetectionSet{"", dets}, thr, per_category).detections;
      },
      py::arg("detections"), py::arg("iou_threshold"), py::arg("per_category") = true);
  m.def(
      "fuse",
      [](const std::vector<Detection>& s, const std::vector<Detection>& d) {
        const auto r = fuse(DetectionSet{"", s}, DetectionSet{"", d}, ConsensusConfig{});
        std::vector<std::string> prov;
        for (auto p : r.provenance) prov.push_back(to_string(p));
        return py::make_tuple(r.detections.detections, prov);
      },
      py::arg("static_detections"), py::arg("dynamic_detections"),
      "Consensus pseudo-labels with default settings; returns (detections, provenance).");

  m.def(
      "ema_update",
      [](const std::vector<double>& teacher, const std::vector<double>& student, double pi) {
        return ema_update(flat_params(teacher), flat_params(student), pi).at("w").values;
      },
      py::arg("teacher"), py::arg("student"), py::arg("pi"));

  m.def(
      "soft_kl_distill",
      [](const Rows& student, const Rows& pseudo) { return soft_kl_distill(student, pseudo).value; },
      py::arg("student"), py::arg("pseudo"));
  m.def("entropy_loss", [](const Rows& p) { return entropy_loss(p).value; }, py::arg("rows"));
  m.def(
      "contrastive_loss",
      [](const Rows& t, const Rows& s, double temp) { return contrastive_loss(t, s, temp).value; },
      py::arg("teacher"), py::arg("student"), py::arg("temperature") = 0.07);

  m.def(
      "generate_page",
      [](const std::string& preset, std::uint64_t seed) {
        const auto page = synth::generate_page(synth::preset(preset), seed);
        py::list ann;
        for (const auto& a : page.annotations) ann.append(py::make_tuple(a.box, a.category));
        return py::make_tuple(to_numpy(page.image), ann);
      },
      py::arg("preset"), py::arg("seed"), "Returns (H x W x 3 float array, [(Box, category)]).");
  m.def("categories", []() { return common4_taxonomy().categories; });

  m.def(
      "infer",
      [](const std::filesystem::path& ckpt_path, const py::array_t<double>& image) {
        const auto ckpt = load_checkpoint(ckpt_path);
        const Detector det(DetectorConfig::from_json(ckpt.detector_config));
        return det.infer(ckpt.params, from_numpy(image)).detections.detections;
      },
      py::arg("checkpoint"), py::arg("image"));

  m.def("adapt_config_defaults", []() { return key_defaults(adapt_config_keys(), AdaptConfig{}); });
  m.def("source_config_defaults", []() { return key_defaults(source_config_keys(), SourceTrainConfig{}); });
}
