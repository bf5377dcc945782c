#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vitforge/checkpoint.hpp"
#include "vitforge/data.hpp"
#include "vitforge/metrics.hpp"
#include "vitforge/vit.hpp"

namespace py = pybind11;
using namespace vitforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict params_to_dict(const ModelParams<float>& params) {
  py::dict out;
  for (const auto& [name, p] : params) out[py::str(name)] = to_array(p.value);
  return out;
}

ModelParams<float> dict_to_params(const py::dict& d) {
  ModelParams<float> params;
  for (const auto& [key, value] : d) params.add(py::cast<std::string>(key), to_tensor(py::cast<FloatArray>(value)));
  return params;
}

}  // namespace

PYBIND11_MODULE(_vitforge, m) {
  m.doc() = "Vision Transformer fine-tuning toolkit";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<ValidationError>(m, "ValidationError", error);
  py::register_exception<CheckpointError>(m, "CheckpointError", error);

  py::class_<ViTConfig>(m, "ViTConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &ViTConfig::image_size)
      .def_readwrite("channels", &ViTConfig::channels)
      .def_readwrite("patch_size", &ViTConfig::patch_size)
      .def_readwrite("hidden_dim", &ViTConfig::hidden_dim)
      .def_readwrite("mlp_dim", &ViTConfig::mlp_dim)
      .def_readwrite("num_heads", &ViTConfig::num_heads)
      .def_readwrite("num_layers", &ViTConfig::num_layers)
      .def_readwrite("num_classes", &ViTConfig::num_classes)
      .def_property_readonly("num_patches", &ViTConfig::num_patches)
      .def_property_readonly("tokens", &ViTConfig::tokens)
      .def("validate", &ViTConfig::validate)
      .def(py::self == py::self)
      .def("__repr__", [](const ViTConfig& c) {
        return "ViTConfig(image_size=" + std::to_string(c.image_size) + ", patch_size=" +
               std::to_string(c.patch_size) + ", hidden_dim=" + std::to_string(c.hidden_dim) +
               ", num_layers=" + std::to_string(c.num_layers) + ", num_classes=" + std::to_string(c.num_classes) + ")";
      });

  m.def("init_params", [](const ViTConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    return params_to_dict(init_params<float>(c, rng));
  }, py::arg("config"), py::arg("seed") = 0);

  m.def("count_parameters", [](const ViTConfig& c) { return count_parameters(zero_params<float>(c)); },
        "Parameter count of a model with this config.");

  m.def("forward", [](const FloatArray& images, const py::dict& params, const ViTConfig& c) {
    const auto p = dict_to_params(params);
    validate_params(p, c);
    Tensor<float> logits;
    {
      py::gil_scoped_release release;
      logits = forward(to_tensor(images), p, c);
    }
    return to_array(logits);
  }, py::arg("images"), py::arg("params"), py::arg("config"), "Logits N×K for an N×C×H×W batch.");

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    return py::make_tuple(ck.config, params_to_dict(ck.params), ck.optimizer.has_value());
  }, "Returns (config, params, has_optimizer_state).");

  m.def("save_checkpoint", [](const std::filesystem::path& path, const ViTConfig& c, const py::dict& params) {
    save_checkpoint(Checkpoint{c, dict_to_params(params), std::nullopt}, path);
  });

  m.def("tensor_manifest", [](const std::filesystem::path& path) {
    py::list out;
    for (const auto& e : tensor_manifest(load_checkpoint(path).params))
      out.append(py::make_tuple(e.name, py::tuple(py::cast(e.shape)), e.checksum));
    return out;
  }, "(name, shape, FNV-1a checksum) per tensor of a checkpoint file.");

  m.def("binary_metrics", [](const std::vector<int>& predicted, const std::vector<int>& truth, int positive) {
    const auto b = binary_metrics(confusion_binary(predicted, truth, positive));
    py::dict out;
    out["accuracy"] = b.accuracy;
    out["precision"] = b.precision;
    out["sensitivity"] = b.recall;
    out["specificity"] = b.specificity;
    out["f1"] = b.f1;
    out["degenerate"] = b.degenerate();
    return out;
  }, py::arg("predicted"), py::arg("truth"), py::arg("positive_class") = 1);

  m.def("roc_auc", [](const std::vector<double>& scores, const std::vector<int>& truth, int positive) {
    return roc_auc(scores, truth, positive);
  }, py::arg("scores"), py::arg("truth"), py::arg("positive_class") = 1);

  m.def("kfold_split", [](std::size_t n, std::size_t k, std::uint64_t seed) { return kfold_split(n, k, seed).fold_of; },
        py::arg("n"), py::arg("k"), py::arg("seed") = 0, "Fold id per sample index.");
}
