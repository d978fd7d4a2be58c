#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mhsa/attention_io.hpp"
#include "mhsa/checkpoint.hpp"
#include "mhsa/config.hpp"
#include "mhsa/errors.hpp"
#include "mhsa/eval.hpp"
#include "mhsa/experiment.hpp"
#include "mhsa/train.hpp"
#include "mhsa/verification.hpp"

namespace py = pybind11;
using namespace mhsa;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.size() == 1) shape.insert(shape.begin(), 1);
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

const Split& pick_split(const Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "query") return d.query;
  if (name == "gallery") return d.gallery;
  throw ConfigError("split must be train, query or gallery");
}

FusionMode fusion_or_default(const Model& m, const std::optional<std::string>& name) {
  return name ? parse_fusion(*name) : m.config.branch.fusion;
}

py::dict metrics_dict(const StepMetrics& s) {
  py::dict d;
  d["step"] = s.step;
  d["epoch"] = s.epoch;
  d["lr"] = s.lr;
  for (auto [k, v] : {std::pair{"ce_q", s.ce_q}, {"ce_p", s.ce_p}, {"ce_z", s.ce_z}, {"triplet_p", s.triplet_p},
                      {"triplet_z", s.triplet_z}, {"fdrt", s.fdrt}, {"ihtl", s.ihtl}, {"acm", s.acm},
                      {"total", s.total}})
    d[k] = v;
  return d;
}

std::vector<EmbeddingRecord> records(const std::vector<std::tuple<int, int, std::vector<double>>>& rows) {
  std::vector<EmbeddingRecord> out;
  for (const auto& [id, cam, f] : rows) out.push_back({id, cam, f});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-head self-attention re-identification core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  auto container = py::register_exception<ContainerError>(m, "ContainerError", base.ptr());
  py::register_exception<CrcError>(m, "CrcError", container.ptr());

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("seed", &RunConfig::seed)
      .def_property(
          "heads", [](const RunConfig& c) { return c.branch.heads; },
          [](RunConfig& c, std::size_t k) { c.branch.heads = k; })
      .def_property(
          "fusion", [](const RunConfig& c) { return to_string(c.branch.fusion); },
          [](RunConfig& c, const std::string& f) { c.eval_fusion = c.branch.fusion = parse_fusion(f); })
      .def_property(
          "epochs", [](const RunConfig& c) { return c.schedule.total_epochs; },
          [](RunConfig& c, std::size_t e) {
            c.schedule.total_epochs = e;
            std::erase_if(c.schedule.decay, [e](const auto& d) { return d.first >= e; });
          })
      .def_property(
          "data_seed", [](const RunConfig& c) { return c.data.seed; },
          [](RunConfig& c, std::uint64_t s) { c.data.seed = s; })
      .def("set", &apply_sweep_value, py::arg("param"), py::arg("value"),
           "Set K, lambda1, lambda2, lambda3 or gamma")
      .def("validate", &RunConfig::validate)
      .def("dump", &dump_run_config);
  m.def("parse_config", &parse_run_config, py::arg("yaml_text"));
  m.def("load_config", &load_run_config, py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("hf", &Dataset::hf)
      .def_readonly("wf", &Dataset::wf)
      .def("size", [](const Dataset& d, const std::string& split) { return pick_split(d, split).samples.size(); })
      .def(
          "sample",
          [](const Dataset& d, const std::string& split, std::size_t i) {
            const Split& s = pick_split(d, split);
            if (i >= s.samples.size()) throw py::index_error("sample index out of range");
            const LabeledSample& x = s.samples[i];
            py::dict out;
            out["id"] = x.id;
            out["cam"] = x.cam;
            out["input"] = to_numpy(x.input);
            out["mask"] = std::vector<bool>(x.mask.begin(), x.mask.end());
            return out;
          },
          py::arg("split"), py::arg("index"))
      .def("save", &save_dataset, py::arg("directory"));
  m.def("generate_dataset", [](const RunConfig& c) { return generate_dataset(c.data_spec()); }, py::arg("config"));
  m.def("load_dataset", &load_dataset, py::arg("directory"));

  py::class_<Model>(m, "Model")
      .def_property_readonly("parameter_count", [](Model& mod) { return mod.parameter_count(); })
      .def_property_readonly("heads", [](const Model& mod) { return mod.config.branch.heads; })
      .def_property_readonly("embed_dim", [](const Model& mod) { return mod.config.backbone.embed_dim; })
      .def("save", [](const Model& mod, const std::filesystem::path& p) { save_checkpoint(p, mod); }, py::arg("path"))
      .def(
          "embed",
          [](const Model& mod, const py::array_t<double>& input, const std::string& variant,
             const std::optional<std::string>& fusion) {
            return FeatureBuilder(mod, parse_variant(variant), fusion_or_default(mod, fusion)).build(from_numpy(input));
          },
          py::arg("input"), py::arg("variant") = "full", py::arg("fusion") = py::none())
      .def(
          "attention",
          [](const Model& mod, const py::array_t<double>& input) {
            const AttentionSnapshot s = attention_snapshot(mod, from_numpy(input));
            return py::make_tuple(to_numpy(s.alpha), s.beta);
          },
          py::arg("input"), "(alpha J x K, beta) for one sample");
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_readonly("numeric_failure", &TrainResult::numeric_failure)
      .def_property_readonly("metrics", [](const TrainResult& r) {
        py::list out;
        for (const auto& s : r.metrics) out.append(metrics_dict(s));
        return out;
      });
  m.def(
      "train", [](const RunConfig& c, const Dataset& d) {
        c.validate();
        py::gil_scoped_release release;
        return train(c.train_config(), d.train);
      },
      py::arg("config"), py::arg("dataset"));

  py::class_<EvalReport>(m, "Report")
      .def_readonly("cmc", &EvalReport::cmc)
      .def_readonly("mAP", &EvalReport::mAP)
      .def_readonly("ap", &EvalReport::ap)
      .def_readonly("valid_queries", &EvalReport::valid_queries)
      .def_readonly("invalid_queries", &EvalReport::invalid_queries)
      .def("rank", &EvalReport::rank, py::arg("r"))
      .def("__repr__", &report_summary);
  m.def(
      "evaluate",
      [](const Model& mod, const Dataset& d, const std::string& variant, const std::optional<std::string>& fusion) {
        const Variant v = resolve_variant(mod, parse_variant(variant), nullptr);
        const FusionMode f = fusion_or_default(mod, fusion);
        py::gil_scoped_release release;
        return evaluate(mod, d, v, f);
      },
      py::arg("model"), py::arg("dataset"), py::arg("variant") = "full", py::arg("fusion") = py::none());
  m.def(
      "cmc_map",
      [](const std::vector<std::tuple<int, int, std::vector<double>>>& q,
         const std::vector<std::tuple<int, int, std::vector<double>>>& g) { return cmc_map(records(q), records(g)); },
      py::arg("queries"), py::arg("gallery"), "queries and gallery are lists of (id, cam, feature)");
  m.def(
      "average_precision",
      [](const std::vector<bool>& rel) {
        const std::vector<std::uint8_t> flags(rel.begin(), rel.end());
        return average_precision(flags);
      },
      py::arg("relevant"));
  m.def(
      "occlusion_score",
      [](const py::array_t<double>& alpha, const std::vector<bool>& mask, const std::vector<double>& head_weights) {
        const std::vector<std::uint8_t> flags(mask.begin(), mask.end());
        return attention_occlusion_score(from_numpy(alpha), flags, head_weights);
      },
      py::arg("alpha"), py::arg("mask"), py::arg("head_weights") = std::vector<double>{});

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed)) {
          py::dict d;
          d["component"] = r.component;
          d["max_rel_error"] = r.max_rel_error;
          d["checked"] = r.checked;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1);
  m.def(
      "sweep",
      [](const RunConfig& c, const std::string& param, const std::vector<double>& values, const Dataset& d) {
        if (!is_sweep_parameter(param)) throw ConfigError("unknown sweep parameter '" + param + "'");
        std::vector<SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_sweep(c, param, values, d);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict row;
          row["value"] = r.value;
          row["report"] = r.report ? py::cast(*r.report) : py::none();
          row["error"] = r.error;
          out.append(row);
        }
        return out;
      },
      py::arg("config"), py::arg("param"), py::arg("values"), py::arg("dataset"));
}
