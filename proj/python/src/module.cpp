#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dsamgn/errors.hpp"
#include "dsamgn/sasamg.hpp"
#include "dsamgn/train.hpp"

namespace py = pybind11;
using namespace dsamgn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

KeyValueConfig to_config(const py::dict& d) {
  KeyValueConfig kv;
  for (const auto& [k, v] : d) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) {
      value = v.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (const auto& item : v) {
        if (!value.empty()) value += ",";
        value += py::str(item).cast<std::string>();
      }
    } else {
      value = py::str(v).cast<std::string>();
    }
    kv.set(py::str(k).cast<std::string>(), value);
  }
  return kv;
}

py::dict metrics_dict(const RetrievalResult& r) {
  py::dict d;
  d["mAP"] = r.mean_ap;
  d["rank1"] = r.rank(1);
  d["rank5"] = r.rank(5);
  d["per_query_ap"] = r.per_query_ap;
  d["excluded_queries"] = r.excluded_queries;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dsamgn, m) {
  m.doc() = "DSAM-GN core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<SampleSet>(m, "SampleSet")
      .def_property_readonly("x", [](const SampleSet& s) { return to_array(s.x); })
      .def_property_readonly("ids", [](const SampleSet& s) { return s.ids; })
      .def_property_readonly("noise_mask", [](const SampleSet& s) { return to_array(s.noise_mask); })
      .def("__len__", &SampleSet::size);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("train", &Dataset::train)
      .def_readonly("query", &Dataset::query)
      .def_readonly("gallery", &Dataset::gallery)
      .def_readonly("signal_patches", &Dataset::signal_patches)
      .def_property_readonly("spec", [](const Dataset& d) {
        py::dict out;
        for (const auto& [k, v] : d.spec.to_pairs()) out[py::str(k)] = v;
        return out;
      })
      .def("save", [](const Dataset& d, const std::string& path) { d.save(path); })
      .def_static("load", [](const std::string& path) { return Dataset::load(path); });

  m.def(
      "generate_dataset",
      [](const py::dict& spec) {
        KeyValueConfig kv = to_config(spec);
        const SyntheticSpec s = SyntheticSpec::read(kv);
        kv.reject_unknown();
        s.validate();
        return generate_dataset(s);
      },
      py::arg("spec") = py::dict(), "Synthetic dataset from a dict of generator settings.");

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::dict& config) {
             KeyValueConfig kv = to_config(config);
             ModelConfig c = ModelConfig::read(kv);
             kv.reject_unknown();
             return Model(c);
           }),
           py::arg("config") = py::dict())
      .def_property_readonly("config",
                             [](const Model& mdl) {
                               py::dict out;
                               for (const auto& [k, v] : mdl.config().to_pairs()) out[py::str(k)] = v;
                               return out;
                             })
      .def("set_beta", &Model::set_beta)
      .def("embed", [](Model& mdl, const Array& batch) { return to_array(mdl.embed(to_tensor(batch))); })
      .def("forward",
           [](Model& mdl, const Array& batch) {
             const ForwardOutputs o = mdl.forward(to_tensor(batch), false);
             py::dict out;
             out["backbone_vec"] = to_array(o.backbone_vec);
             out["gap_vec"] = to_array(o.gap_vec);
             out["bn_vec"] = to_array(o.bn_vec);
             out["logits"] = to_array(o.logits);
             return out;
           })
      .def("parameters",
           [](const Model& mdl) {
             py::dict out;
             for (const auto& [name, t] : mdl.parameters()) out[py::str(name)] = to_array(t);
             return out;
           })
      .def("save", [](const Model& mdl, const std::string& path) { mdl.save(path); })
      .def_static("load", [](const std::string& path) { return Model::load(path); });

  m.def(
      "train",
      [](Model& model, const Dataset& data, const py::dict& config) {
        KeyValueConfig kv = to_config(config);
        const TrainConfig tc = TrainConfig::read(kv);
        const LossConfig lc = LossConfig::read(kv);
        kv.reject_unknown();
        py::list out;
        for (const auto& e : train(model, tc, lc, data)) {
          py::dict d;
          d["iter"] = e.iter;
          d["epoch"] = e.epoch;
          d["lr"] = e.lr;
          d["total"] = e.total;
          d["res"] = e.res;
          d["triplet"] = e.triplet;
          d["id"] = e.id;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("data"), py::arg("config") = py::dict(),
      "Trains in place; returns the per-iteration loss log.");

  m.def(
      "evaluate", [](Model& model, const Dataset& data) { return metrics_dict(evaluate(model, data)); },
      "Query/gallery retrieval metrics.");

  m.def(
      "evaluate_retrieval",
      [](const Array& q, const Array& g, const std::vector<int>& qids, const std::vector<int>& gids) {
        return metrics_dict(evaluate_retrieval(to_tensor(q), to_tensor(g), qids, gids));
      },
      py::arg("query"), py::arg("gallery"), py::arg("query_ids"), py::arg("gallery_ids"));

  m.def(
      "erase",
      [](const Array& s, double beta) {
        const SimilarityAdjacency a = erase(SimilarityMatrix{to_tensor(s)}, beta);
        return py::make_tuple(to_array(a.a), a.threshold);
      },
      py::arg("similarity"), py::arg("beta"), "Returns (adjacency, threshold).");

  m.def("percentile_rank", &percentile_rank, py::arg("n"), py::arg("beta"));
}
