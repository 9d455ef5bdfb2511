#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cgm/cli.hpp"
#include "cgm/clustering.hpp"
#include "cgm/errors.hpp"
#include "cgm/factories.hpp"
#include "cgm/influence.hpp"
#include "cgm/interventions.hpp"
#include "cgm/io.hpp"

namespace py = pybind11;
using namespace cgm;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Matrix to_matrix(const DoubleArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

std::vector<Variable> layer_subset(const CgmGraph& g, const std::string& layer, const std::vector<std::size_t>& idx) {
  return ModuleSel::of_layer(g.layer(layer), idx).channels;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Causal generative model engine: interventions, influence maps and module discovery";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<CgmGraph>(m, "Graph")
      .def_property_readonly("latent_dim", &CgmGraph::latent_dim)
      .def_property_readonly("layers",
                             [](const CgmGraph& g) {
                               std::vector<std::string> names;
                               for (const auto& l : g.layers()) names.push_back(l.name);
                               return names;
                             })
      .def("layer_size", [](const CgmGraph& g, const std::string& name) { return g.layer(name).variables.size(); })
      .def("sample_latent",
           [](const CgmGraph& g, std::uint64_t seed) {
             Rng rng(seed);
             return to_array(g.latent().sample(rng));
           },
           py::arg("seed"))
      .def("evaluate", [](const CgmGraph& g, const FloatArray& z) { return to_array(g.evaluate(to_tensor(z))); },
           py::arg("z"))
      .def("latent_ancestors",
           [](const CgmGraph& g, const std::string& layer, const std::vector<std::size_t>& channels) {
             return g.latent_ancestors(layer_subset(g, layer, channels));
           },
           py::arg("layer"), py::arg("channels"))
      .def("shares_latent_ancestor",
           [](const CgmGraph& g, const std::string& layer, const std::vector<std::size_t>& channels) {
             return g.shares_latent_ancestor(layer_subset(g, layer, channels), g.layer(layer));
           },
           py::arg("layer"), py::arg("channels"))
      .def("is_layer",
           [](const CgmGraph& g, const std::vector<std::string>& specs) {
             return std::string(status_name(g.is_layer(g.parse_variables(specs)).status));
           },
           py::arg("variables"))
      .def("hybridize",
           [](const CgmGraph& g, const std::string& layer, const std::vector<std::size_t>& channels,
              const FloatArray& z1, const FloatArray& z2) {
             const auto r = hybridize(g, ModuleSel::of_layer(g.layer(layer), channels), to_tensor(z1), to_tensor(z2));
             return py::make_tuple(to_array(r.hybrid), to_array(r.original1), to_array(r.original2));
           },
           py::arg("layer"), py::arg("channels"), py::arg("z1"), py::arg("z2"))
      .def("influence_map",
           [](const CgmGraph& g, const std::string& layer, const std::vector<std::size_t>& channels,
              std::size_t n_pairs, std::uint64_t seed, std::size_t workers) {
             const auto im = influence_map(g, layer_subset(g, layer, channels), {n_pairs, seed, workers});
             return py::make_tuple(to_array(im.gray), individual_influence(im));
           },
           py::arg("layer"), py::arg("channels"), py::arg("n_pairs") = 256, py::arg("seed") = 0,
           py::arg("workers") = 0)
      .def("elementary_influence_maps",
           [](const CgmGraph& g, const std::string& layer, std::size_t n_pairs, std::uint64_t seed,
              std::size_t workers) {
             return to_array(elementary_influence_maps(g, g.layer(layer), {n_pairs, seed, workers}).maps);
           },
           py::arg("layer"), py::arg("n_pairs") = 256, py::arg("seed") = 0, py::arg("workers") = 0)
      .def("save", [](const CgmGraph& g, const io::fs::path& manifest,
                      const io::fs::path& blob) { io::save_model(g, manifest, blob); },
           py::arg("manifest"), py::arg("blob"));

  m.def("make_seeded_generator", &make_seeded_generator, py::arg("arch"), py::arg("seed"));
  m.def("make_default_planted",
        [](std::uint64_t seed) {
          auto pm = make_default_planted(seed);
          return py::make_tuple(std::move(pm.graph), pm.partition);
        },
        py::arg("seed"));
  m.def("load_model", [](const io::fs::path& manifest) { return io::load_model(manifest); }, py::arg("manifest"));

  m.def("read_eims",
        [](const io::fs::path& path) {
          const auto s = io::read_eims(path);
          return py::make_tuple(s.layer, to_array(s.maps), s.seed, s.n_pairs);
        },
        py::arg("path"));
  m.def("preprocess_maps",
        [](const FloatArray& maps, std::size_t window, double percentile) {
          EimStack s;
          s.maps = to_tensor(maps);
          if (s.maps.rank() != 3) throw DimensionError("expected a [C,H,W] array");
          return to_array(preprocess_maps(s, window, percentile).maps);
        },
        py::arg("maps"), py::arg("window") = 3, py::arg("percentile") = 75.0);

  m.def("nmf",
        [](const DoubleArray& s, std::size_t k, std::size_t iters, double tol, std::uint64_t seed) {
          const auto r = nmf(to_matrix(s), k, {iters, tol, seed});
          return py::make_tuple(to_array(r.w), to_array(r.h), r.error_history);
        },
        py::arg("s"), py::arg("k"), py::arg("iters") = 500, py::arg("tol") = 1e-5, py::arg("seed") = 0);
  m.def("cluster",
        [](const DoubleArray& s, std::size_t k, const std::string& method) {
          return fit_clusters(to_matrix(s), k, parse_method(method)).assignments;
        },
        py::arg("s"), py::arg("k"), py::arg("method") = "nmf");
  m.def("match_labelings",
        [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t k) {
          const auto r = match_labelings(a, b, k);
          return py::make_tuple(r.consistency, r.permutation);
        },
        py::arg("a"), py::arg("b"), py::arg("k"));
  m.def("stability",
        [](const DoubleArray& s, const std::vector<std::size_t>& ks, std::size_t reps, std::uint64_t seed,
           const std::string& method) {
          StabilityOptions o;
          o.repetitions = reps;
          o.seed = seed;
          o.method = parse_method(method);
          py::list rows;
          for (const auto& e : stability_analysis(to_matrix(s), ks, o).entries) {
            py::dict d;
            d["k"] = e.k;
            d["consistency_mean"] = e.consistency_mean;
            d["consistency_std"] = e.consistency_std;
            d["cosine_mean"] = e.cosine_mean;
            d["cosine_std"] = e.cosine_std;
            rows.append(d);
          }
          return rows;
        },
        py::arg("s"), py::arg("k_values"), py::arg("repetitions") = 20, py::arg("seed") = 0,
        py::arg("method") = "nmf");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::vector<std::string> all{kToolName};
          all.insert(all.end(), args.begin(), args.end());
          std::vector<const char*> argv;
          for (const auto& a : all) argv.push_back(a.c_str());
          std::ostringstream out, err;
          const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
