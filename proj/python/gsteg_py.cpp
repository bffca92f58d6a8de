#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gsteg/cli.hpp"
#include "gsteg/eval.hpp"
#include "gsteg/inference.hpp"
#include "gsteg/io.hpp"
#include "gsteg/learning.hpp"
#include "gsteg/synth.hpp"
#include "gsteg/verify.hpp"

namespace py = pybind11;
using namespace gsteg;

namespace {

ObservationInstance parse_instance(const std::string& text) { return instance_from_json(json::parse(text)); }

InferenceOptions inference_options(int passes, const std::string& schedule, double damping) {
  InferenceOptions opts;
  opts.num_passes = passes;
  opts.schedule = schedule == "parallel" ? Schedule::parallel : Schedule::sequential;
  opts.damping = damping;
  opts.validate();
  return opts;
}

GraphSpec make_spec(int num_streams, int num_steps, std::vector<int> label_sizes, std::vector<int> feature_dims) {
  GraphSpec spec;
  spec.num_streams = num_streams;
  spec.num_steps = num_steps;
  spec.label_sizes = std::move(label_sizes);
  spec.feature_dims = std::move(feature_dims);
  spec.validate();
  return spec;
}

py::dict suite_dict(const SuiteResult& r) {
  py::dict d;
  d["name"] = r.name;
  d["passed"] = r.passed;
  d["skipped"] = r.skipped;
  d["worst"] = r.worst;
  d["threshold"] = r.threshold;
  d["cases"] = r.cases;
  d["seconds"] = r.seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gated spatio-temporal energy graph core";

  py::register_exception<Error>(m, "GstegError", PyExc_ValueError);

  py::class_<EnergyModel>(m, "Model")
      .def(py::init([](int num_streams, int num_steps, std::vector<int> label_sizes, std::vector<int> feature_dims,
                       const std::string& mode, int rank, double bandwidth, std::uint64_t seed) {
             ModelConfig cfg;
             cfg.mode = parse_mode(mode);
             cfg.rank = rank;
             cfg.bandwidth = bandwidth;
             return EnergyModel::create(make_spec(num_streams, num_steps, std::move(label_sizes), std::move(feature_dims)),
                                        cfg, seed);
           }),
           py::arg("num_streams"), py::arg("num_steps"), py::arg("label_sizes"), py::arg("feature_dims"),
           py::arg("mode") = "gsteg", py::arg("rank") = 2, py::arg("bandwidth") = 10.0, py::arg("seed") = 0)
      .def_static("from_json", [](const std::string& text) { return model_from_checkpoint(json::parse(text)); })
      .def("to_json", [](const EnergyModel& model) { return model_to_json(model).dump(); })
      .def_property_readonly("mode", [](const EnergyModel& model) { return std::string(to_string(model.mode())); })
      .def_property_readonly("num_parameters", &EnergyModel::num_parameters)
      .def("parameter_names",
           [](const EnergyModel& model) {
             std::vector<std::string> names;
             for (const Tensor& t : model.tensors()) names.push_back(t.name);
             return names;
           })
      .def("marginals",
           [](const EnergyModel& model, const std::string& instance, int passes, const std::string& schedule,
              double damping) {
             return run_mean_field(model, parse_instance(instance), inference_options(passes, schedule, damping)).nodes;
           },
           py::arg("instance"), py::arg("passes") = 3, py::arg("schedule") = "sequential", py::arg("damping") = 0.5)
      .def("map_labels",
           [](const EnergyModel& model, const std::string& instance, int passes) {
             return map_labels(run_mean_field(model, parse_instance(instance), inference_options(passes, "sequential", 0.5)))
                 .labels;
           },
           py::arg("instance"), py::arg("passes") = 3)
      .def("exact_marginals",
           [](const EnergyModel& model, const std::string& instance) {
             return exact_inference(model, parse_instance(instance)).exact_marginals.nodes;
           })
      .def("energy",
           [](const EnergyModel& model, const std::string& instance, std::vector<std::vector<int>> labels) {
             return total_energy(model, parse_instance(instance), Assignment{std::move(labels)});
           })
      .def("loss",
           [](const EnergyModel& model, const std::string& instance, int passes) {
             return loss(model, parse_instance(instance), inference_options(passes, "sequential", 0.5));
           },
           py::arg("instance"), py::arg("passes") = 3)
      .def("finite_diff_check",
           [](const EnergyModel& model, const std::string& instance, double epsilon) {
             return finite_diff_check(model, parse_instance(instance), {}, epsilon);
           },
           py::arg("instance"), py::arg("epsilon") = 1e-5);

  m.def(
      "generate_dataset",
      [](int num_streams, int num_steps, std::vector<int> label_sizes, int num_contexts, int num_instances,
         std::uint64_t seed, double context_strength, double noise_std, double coupling_strength) {
        SynthConfig cfg;
        cfg.spec = SynthConfig::make_spec(num_streams, num_steps, std::move(label_sizes), num_contexts);
        cfg.num_contexts = num_contexts;
        cfg.num_instances = num_instances;
        cfg.seed = seed;
        cfg.context_strength = context_strength;
        cfg.noise_std = noise_std;
        cfg.coupling_strength = coupling_strength;
        std::vector<std::string> out;
        for (const ObservationInstance& inst : generate_dataset(cfg)) out.push_back(instance_to_json(inst).dump());
        return out;
      },
      py::arg("num_streams"), py::arg("num_steps"), py::arg("label_sizes"), py::arg("num_contexts") = 2,
      py::arg("num_instances") = 100, py::arg("seed") = 0, py::arg("context_strength") = 2.0,
      py::arg("noise_std") = 0.5, py::arg("coupling_strength") = 2.0);

  m.def(
      "viou",
      [](int start_a, std::vector<std::array<double, 4>> boxes_a, int start_b, std::vector<std::array<double, 4>> boxes_b) {
        auto build = [](int start, const std::vector<std::array<double, 4>>& boxes) {
          std::vector<Box> out;
          for (const auto& b : boxes) out.push_back({b[0], b[1], b[2], b[3]});
          return Trajectory(start, std::move(out));
        };
        return viou(build(start_a, boxes_a), build(start_b, boxes_b));
      },
      py::arg("start_a"), py::arg("boxes_a"), py::arg("start_b"), py::arg("boxes_b"));
  m.def("average_precision", &average_precision, py::arg("hits"), py::arg("num_positives"));
  m.def(
      "recognition_accuracy",
      [](const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gold) {
        return recognition_metrics(preds, gold).acc_at_1;
      },
      py::arg("preds"), py::arg("gold"));

  m.def(
      "verify",
      [](const std::string& suite, std::uint64_t seed) {
        std::vector<SuiteResult> results;
        if (suite == "gradcheck") results = verify_gradcheck(seed);
        else if (suite == "freeenergy") results = {verify_free_energy(seed)};
        else if (suite == "oracle") results = verify_oracle(seed);
        else if (suite == "metrics") results = verify_metrics(seed);
        else throw SpecError("unknown suite '" + suite + "'");
        py::list out;
        for (const SuiteResult& r : results) out.append(suite_dict(r));
        return out;
      },
      py::arg("suite"), py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
