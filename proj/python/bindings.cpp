#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sgembed/checkpoint.hpp"
#include "sgembed/correlation.hpp"
#include "sgembed/dataset.hpp"
#include "sgembed/error.hpp"
#include "sgembed/evaluation.hpp"
#include "sgembed/gcn.hpp"
#include "sgembed/synth.hpp"
#include "sgembed/train.hpp"

namespace py = pybind11;
using namespace sgembed;

namespace {

py::dict correlations(const CorrelationSet& c) {
  py::dict d;
  d["kendall_tau"] = c.kendall_tau;
  d["spearman_rho"] = c.spearman_rho;
  d["pearson_r"] = c.pearson_r;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["n_images"] = r.n_images;
  d["row_wise"] = correlations(r.row_wise);
  d["all_pairs"] = correlations(r.all_pairs);
  return d;
}

py::dict retrieval_dict(const RetrievalReport& r) {
  py::dict d;
  d["noise_level"] = r.noise_level;
  d["mrr"] = r.mrr;
  d["recall_at"] = r.recall_at;
  d["ranks"] = r.ranks;
  return d;
}

Dataset load_split(const std::filesystem::path& dir, double train, double val, double test,
                   std::uint64_t split_seed) {
  Dataset ds = load_dataset(DatasetPaths::in_directory(dir));
  ds.assign_split(SplitRatios{train, val, test}, split_seed);
  return ds;
}

template <class Config, class Setter>
Config from_kwargs(Config config, const py::kwargs& kwargs, Setter set) {
  for (const auto& [key, value] : kwargs) {
    const std::string text = py::isinstance<py::bool_>(value)
                                 ? (value.template cast<bool>() ? "true" : "false")
                                 : py::str(value).template cast<std::string>();
    set(config, py::str(key).cast<std::string>(), text);
  }
  return config;
}

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Scene-graph embedding core";

  py::register_exception<Error>(m, "Error");

  m.def("kendall_tau", [](py::array_t<double> x, py::array_t<double> y) {
    const auto a = as_vector(x), b = as_vector(y);
    return kendall_tau(a, b);
  });
  m.def("spearman_rho", [](py::array_t<double> x, py::array_t<double> y) {
    const auto a = as_vector(x), b = as_vector(y);
    return spearman_rho(a, b);
  });
  m.def("pearson_r", [](py::array_t<double> x, py::array_t<double> y) {
    const auto a = as_vector(x), b = as_vector(y);
    return pearson_r(a, b);
  });

  m.def(
      "generate",
      [](const std::filesystem::path& out, const py::kwargs& kwargs) {
        const SynthConfig cfg = from_kwargs(SynthConfig{}, kwargs, set_synth_option);
        const SynthDataset s = generate(cfg);
        write_synth_dataset(s.dataset, out);
        return s.dataset.size();
      },
      py::arg("out"), "Writes a synthetic dataset; keyword arguments override generator options.");

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &load_split, py::arg("directory"), py::arg("train") = 0.7, py::arg("val") = 0.2,
                  py::arg("test") = 0.1, py::arg("split_seed") = 0)
      .def("__len__", &Dataset::size)
      .def_property_readonly("image_ids",
                             [](const Dataset& d) {
                               std::vector<std::string> ids;
                               for (const auto& g : d.graphs) ids.push_back(g.image_id);
                               return ids;
                             })
      .def("indices", [](const Dataset& d, const std::string& split) { return d.indices(parse_split(split)); })
      .def_property_readonly("similarity", [](const Dataset& d) {
        const std::size_t n = d.similarity.size();
        py::array_t<double> out({n, n});
        auto v = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) v(i, j) = d.similarity(i, j);
        return out;
      });

  py::class_<GcnModel>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const GcnModel& g, const std::filesystem::path& p) { save_checkpoint(g, p); })
      .def_property_readonly("state_dim", [](const GcnModel& g) { return g.config.state_dim; })
      .def(
          "embed",
          [](const GcnModel& g, const Dataset& d, const std::string& split) {
            std::vector<SceneGraph> graphs;
            for (std::size_t i : d.indices(parse_split(split))) graphs.push_back(augment_trivial(d.graphs[i], d.vocab));
            const Tensor t = embed_graphs(g, graphs);
            py::array_t<double> out({t.rows(), t.cols()});
            std::copy(t.data().begin(), t.data().end(), out.mutable_data());
            return out;
          },
          py::arg("dataset"), py::arg("split") = "test")
      .def(
          "evaluate",
          [](const GcnModel& g, const Dataset& d, const std::string& split) {
            return report_dict(evaluate(g, d, parse_split(split)));
          },
          py::arg("dataset"), py::arg("split") = "test")
      .def(
          "retrieve",
          [](const GcnModel& g, const Dataset& d, std::size_t noise, std::uint64_t seed, const std::string& split) {
            return retrieval_dict(retrieval_experiment(g, d, parse_split(split), noise, seed));
          },
          py::arg("dataset"), py::arg("noise"), py::arg("seed") = 0, py::arg("split") = "test");

  m.def(
      "train",
      [](const Dataset& d, std::optional<std::filesystem::path> out, const py::kwargs& kwargs) {
        const TrainConfig cfg = from_kwargs(TrainConfig{}, kwargs, set_train_option);
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(d, cfg, out);
        }();
        py::list log;
        for (const auto& e : r.log.epochs) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["mean_loss"] = e.mean_loss;
          row["val_kendall_tau"] = e.val_kendall_tau;
          log.append(row);
        }
        return py::make_tuple(std::move(r.best), log);
      },
      py::arg("dataset"), py::arg("out") = py::none(),
      "Trains on the dataset's train split; returns (best model, epoch log). Keyword "
      "arguments override training options.");
}
