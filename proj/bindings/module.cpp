// Python bindings: the library's main operations behind a small, typed
// surface. Heavy results cross the boundary as parsed JSON (dicts/lists), so
// the Python side sees exactly what the CLI writes to disk.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaforge/config.hpp"
#include "adaforge/datasets.hpp"
#include "adaforge/gradcheck.hpp"
#include "adaforge/manifest.hpp"
#include "adaforge/sweep.hpp"
#include "adaforge/trainer.hpp"

namespace py = pybind11;
using namespace adaforge;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
      return py::int_(j.get<int64_t>());
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<uint64_t>());
    case nlohmann::json::value_t::number_float:
      return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& e : j) out.append(json_to_py(e));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = json_to_py(v);
      return out;
    }
    default: return py::none();
  }
}

py::dict labeled_set_to_py(const Tensor& inputs, const std::vector<int64_t>& labels) {
  py::dict out;
  py::list shape;
  for (int64_t d : inputs.shape.dims()) shape.append(d);
  py::list values;
  for (int64_t i = 0; i < inputs.numel(); ++i)
    values.append(inputs[static_cast<size_t>(i)]);
  out["shape"] = shape;
  out["inputs"] = values;
  py::list lab;
  for (int64_t l : labels) lab.append(l);
  out["labels"] = lab;
  return out;
}

}  // namespace

PYBIND11_MODULE(_adaforge, m) {
  m.doc() =
      "Adversarial domain adaptation: reverse-mode autodiff core, split "
      "models, routed objectives, procedural shifted datasets, and the "
      "multi-seed study harness.";
  m.attr("__version__") = std::string(kArtifactVersion);

  m.def("canonical_config",
        [](const std::string& text) { return serialize_config(parse_config_text(text)); },
        py::arg("config_text"),
        "Parses a key=value run config and returns its canonical rendering.");

  m.def("train",
        [](const std::string& text) {
          const RunConfig cfg = parse_config_text(text);
          cfg.validate();
          return json_to_py(nlohmann::json::parse(run_trial(cfg).to_json()));
        },
        py::arg("config_text"),
        "Runs one training trial from a key=value config; returns the trial "
        "record (per-epoch traces and final metrics) as nested dicts.");

  m.def("make_dataset",
        [](const std::string& text) {
          const RunConfig cfg = parse_config_text(text);
          cfg.validate();
          const DomainData data = make_pair(cfg.resolved_data());
          py::dict out;
          out["source_train"] =
              labeled_set_to_py(data.source_train.inputs, data.source_train.labels);
          out["source_test"] =
              labeled_set_to_py(data.source_test.inputs, data.source_test.labels);
          out["target_train"] = labeled_set_to_py(data.target_train.inputs, {});
          out["target_test"] =
              labeled_set_to_py(data.target_test.inputs, data.target_test.labels);
          return out;
        },
        py::arg("config_text"),
        "Builds the shifted source/target dataset pair a config describes; "
        "target training labels are withheld by construction.");

  m.def("gradcheck",
        [](uint64_t seed, int models, bool corrupt) {
          const GradcheckReport r = run_gradcheck(seed, models, corrupt);
          py::dict out;
          out["models"] = r.models;
          out["params_checked"] = r.params_checked;
          out["max_rel_err"] = r.max_rel_err;
          out["worst_param"] = r.worst_param;
          out["failures"] = r.failures;
          out["routing_ok"] = r.routing_ok;
          out["tolerance"] = r.tolerance;
          out["passed"] = r.passed();
          return out;
        },
        py::arg("seed") = 1, py::arg("models") = 20, py::arg("corrupt") = false,
        "Verifies routed analytic gradients against central finite "
        "differences on random small models.");

  m.def("curves_csv", &curves_csv,
        "Analytic encoder-loss curves (confusion vs minimax) over the "
        "discriminator output grid, as CSV text.");

  m.def("confusion_loss", [](double d) { return -std::log(d); }, py::arg("d"),
        "Target-side confusion loss at discriminator output d.");
  m.def("confusion_grad", [](double d) { return -1.0 / d; }, py::arg("d"),
        "d-derivative of the confusion loss.");
  m.def("minimax_loss", [](double d) { return std::log(1.0 - d); }, py::arg("d"),
        "Target-side minimax loss at discriminator output d.");
  m.def("minimax_grad", [](double d) { return -1.0 / (1.0 - d); }, py::arg("d"),
        "d-derivative of the minimax loss.");
}
