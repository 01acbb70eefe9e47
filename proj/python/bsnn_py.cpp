#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "bsnn/app.hpp"
#include "bsnn/data.hpp"
#include "bsnn/diffusion.hpp"
#include "bsnn/errors.hpp"
#include "bsnn/rotations.hpp"
#include "bsnn/sheaf.hpp"
#include "bsnn/uq.hpp"

namespace py = pybind11;
using namespace bsnn;
using linalg::Matrix;
using rotations::CayleyParams;
using rotations::Rotation;

namespace {

// Accepts a JSON string or anything json.dumps can serialize.
std::string as_json(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

app::RunConfig run_config(const py::object& config) {
  return config.is_none() ? app::RunConfig{} : app::parse_run_config(as_json(config));
}

sheaf::CellularSheaf make_sheaf(std::shared_ptr<const sheaf::Graph> graph, const std::string& kind,
                                const std::vector<std::pair<Matrix, Matrix>>& maps, std::size_t d) {
  const auto k = sheaf::map_kind_from_string(kind);
  auto one = [&](const Matrix& m) {
    switch (k) {
      case sheaf::MapKind::diagonal: {
        if (m.rows() != 1 && m.cols() != 1) return sheaf::RestrictionMap::diagonal(m.diagonal());
        return sheaf::RestrictionMap::diagonal(Eigen::Map<const linalg::Vector>(m.data(), m.size()));
      }
      case sheaf::MapKind::special_orthogonal:
        return sheaf::RestrictionMap::rotation(Rotation(m));
      case sheaf::MapKind::general:
        break;
    }
    return sheaf::RestrictionMap::general(m);
  };
  std::vector<sheaf::CellularSheaf::MapPair> pairs;
  for (const auto& [fu, fv] : maps) pairs.emplace_back(one(fu), one(fv));
  return sheaf::CellularSheaf(std::move(graph), std::move(pairs), d);
}

diffusion::FeatureMatrix features_for(const sheaf::CellularSheaf& s, const Matrix& x) {
  return diffusion::FeatureMatrix(s.graph().num_nodes(), s.stalk_dim(), x);
}

py::dict epoch_dict(const app::EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["nll"] = e.nll;
  d["kl"] = e.kl;
  d["lambda"] = e.lambda;
  d["train_acc"] = e.train_acc;
  d["valid_acc"] = e.valid_acc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian sheaf neural networks";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UnsupportedDimension>(m, "UnsupportedDimension", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<SingularityError>(m, "SingularityError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_ArithmeticError);

  // Rotations
  m.def("cayley", [](const Matrix& a) { return rotations::cayley(a).matrix(); }, py::arg("skew"));
  m.def("cayley_inverse", [](const Matrix& p) { return rotations::cayley_inverse(Rotation(p)); },
        py::arg("rotation"));
  m.def("cayley_density",
        [](const Matrix& p, const Matrix& mean, double kappa) {
          return rotations::cayley_density(Rotation(p), CayleyParams(Rotation(mean), kappa));
        },
        py::arg("rotation"), py::arg("mean"), py::arg("kappa"));
  m.def("kl_cayley_uniform", &rotations::kl_cayley_uniform, py::arg("kappa"), py::arg("n"));
  m.def("sample_uniform_so",
        [](std::size_t n, std::uint64_t seed) {
          std::mt19937_64 rng(seed);
          return rotations::sample_uniform_so(n, rng).matrix();
        },
        py::arg("n"), py::arg("seed") = 0);
  m.def("sample_cayley",
        [](const Matrix& mean, double kappa, std::size_t count, std::uint64_t seed, bool acg) {
          std::mt19937_64 rng(seed);
          const CayleyParams params(Rotation(mean), kappa);
          std::vector<Matrix> out;
          out.reserve(count);
          for (std::size_t i = 0; i < count; ++i) {
            out.push_back((acg ? rotations::acg_sample_so3(params, rng) : rotations::sample_cayley(params, rng)).matrix());
          }
          return out;
        },
        py::arg("mean"), py::arg("kappa"), py::arg("count") = 1, py::arg("seed") = 0, py::arg("acg") = false);

  // Graphs and sheaves
  py::class_<sheaf::Graph, std::shared_ptr<sheaf::Graph>>(m, "Graph")
      .def(py::init<std::size_t, std::vector<sheaf::Edge>, Matrix, std::vector<int>, int>(), py::arg("num_nodes"),
           py::arg("edges"), py::arg("features"), py::arg("labels"), py::arg("num_classes"))
      .def_property_readonly("num_nodes", &sheaf::Graph::num_nodes)
      .def_property_readonly("num_classes", &sheaf::Graph::num_classes)
      .def_property_readonly("edges", &sheaf::Graph::edges)
      .def_property_readonly("features", &sheaf::Graph::features)
      .def_property_readonly("labels", &sheaf::Graph::labels)
      .def("degrees", &sheaf::Graph::degrees);

  py::class_<sheaf::CellularSheaf>(m, "Sheaf")
      .def(py::init([](std::shared_ptr<sheaf::Graph> g, const std::string& kind,
                       const std::vector<std::pair<Matrix, Matrix>>& maps, std::size_t d) {
             return make_sheaf(std::move(g), kind, maps, d);
           }),
           py::arg("graph"), py::arg("kind"), py::arg("maps"), py::arg("stalk_dim") = 0)
      .def_property_readonly("stalk_dim", &sheaf::CellularSheaf::stalk_dim)
      .def_property_readonly("kind", [](const sheaf::CellularSheaf& s) { return sheaf::to_string(s.kind()); });
  m.def("identity_sheaf",
        [](std::shared_ptr<sheaf::Graph> g, std::size_t d) { return sheaf::identity_sheaf(std::move(g), d); },
        py::arg("graph"), py::arg("d"));
  m.def("coboundary", [](const sheaf::CellularSheaf& s) { return sheaf::build_coboundary(s); }, py::arg("sheaf"));
  m.def("sheaf_laplacian", [](const sheaf::CellularSheaf& s) { return sheaf::sheaf_laplacian(s).dense(); },
        py::arg("sheaf"));
  m.def("normalized_sheaf_laplacian",
        [](const sheaf::CellularSheaf& s, double eps) { return sheaf::normalized_sheaf_laplacian(s, eps).dense(); },
        py::arg("sheaf"), py::arg("eps") = sheaf::kDefaultDegreeFloor);

  // Diffusion
  m.def("diffuse",
        [](const sheaf::CellularSheaf& s, const Matrix& x0, double alpha, std::size_t max_steps, double tol) {
          const auto r = diffusion::diffuse(features_for(s, x0), sheaf::normalized_sheaf_laplacian(s),
                                            {alpha, max_steps, tol});
          py::dict out;
          out["x"] = r.x.values;
          out["steps"] = r.steps;
          out["converged"] = r.converged;
          out["update_norms"] = r.update_norms;
          return out;
        },
        py::arg("sheaf"), py::arg("x0"), py::arg("alpha") = 0.5, py::arg("max_steps") = 100000, py::arg("tol") = 1e-10);
  m.def("kernel_projection_limit",
        [](const sheaf::CellularSheaf& s, const Matrix& x0) {
          return diffusion::kernel_projection_limit(features_for(s, x0), sheaf::normalized_sheaf_laplacian(s)).values;
        },
        py::arg("sheaf"), py::arg("x0"));
  m.def("dirichlet_energy",
        [](const sheaf::CellularSheaf& s, const Matrix& x) {
          return diffusion::dirichlet_energy(features_for(s, x), sheaf::normalized_sheaf_laplacian(s));
        },
        py::arg("sheaf"), py::arg("x"));
  m.def("linear_separation_check", &diffusion::linear_separation_check, py::arg("points"), py::arg("labels"));

  // Uncertainty
  m.def("predictive_entropy", &uq::predictive_entropy, py::arg("mean_probs"));
  m.def("epistemic_variance", &uq::epistemic_variance, py::arg("stack"));
  m.def("mutual_information", &uq::mutual_information, py::arg("stack"));
  m.def("expected_calibration_error",
        [](const std::vector<double>& conf, const std::vector<int>& pred, const std::vector<int>& labels,
           std::size_t bins) { return uq::expected_calibration_error(conf, pred, labels, bins).ece; },
        py::arg("confidence"), py::arg("predicted"), py::arg("labels"), py::arg("bins") = 10);

  // Data
  py::class_<data::Dataset>(m, "Dataset")
      .def_property_readonly("graph", [](const data::Dataset& d) { return std::const_pointer_cast<sheaf::Graph>(d.graph); })
      .def_property_readonly("train", [](const data::Dataset& d) { return d.splits.train; })
      .def_property_readonly("valid", [](const data::Dataset& d) { return d.splits.valid; })
      .def_property_readonly("test", [](const data::Dataset& d) { return d.splits.test; })
      .def("to_json", &data::serialize_graph_dataset)
      .def("save", &data::save_graph_dataset, py::arg("path"));
  m.def("generate_sbm",
        [](std::size_t n, int C, double mean_degree, double homophily, std::size_t feature_dim, double feature_noise,
           std::uint64_t seed) {
          data::SBMConfig cfg;
          cfg.n = n;
          cfg.C = C;
          cfg.mean_degree = mean_degree;
          cfg.homophily = homophily;
          cfg.feature_dim = feature_dim;
          cfg.feature_noise = feature_noise;
          cfg.seed = seed;
          return data::generate_sbm(cfg);
        },
        py::arg("n") = 200, py::arg("C") = 2, py::arg("mean_degree") = 6.0, py::arg("homophily") = 0.1,
        py::arg("feature_dim") = 8, py::arg("feature_noise") = 0.5, py::arg("seed") = 0);
  m.def("load_dataset", &data::load_graph_dataset, py::arg("path"));
  m.def("parse_dataset", [](const py::object& obj) { return data::parse_graph_dataset(as_json(obj)); },
        py::arg("dataset"));

  // Models
  py::class_<nn::Model>(m, "Model")
      .def("predict_proba",
           [](const nn::Model& model, const data::Dataset& ds, std::uint64_t seed) {
             std::mt19937_64 rng(seed);
             return model.predict_proba(*ds.graph, rng);
           },
           py::arg("dataset"), py::arg("seed") = 0)
      .def("to_json", [](const nn::Model& model) { return app::model_to_json(model); })
      .def("save", [](const nn::Model& model, const std::string& path) { app::save_model(model, path); },
           py::arg("path"))
      .def_property_readonly("num_parameters", [](const nn::Model& model) { return model.params().coordinate_count(); });
  m.def("load_model", &app::load_model, py::arg("path"));

  m.def("train",
        [](const data::Dataset& ds, const py::object& config) {
          const auto result = app::train(run_config(config), ds);
          py::list log;
          for (const auto& e : result.log) log.append(epoch_dict(e));
          py::dict out;
          out["model"] = result.model;
          out["log"] = log;
          out["best_epoch"] = result.best_epoch;
          out["best_valid_acc"] = result.best_valid_acc;
          return out;
        },
        py::arg("dataset"), py::arg("config") = py::none());
  m.def("evaluate",
        [](const nn::Model& model, const data::Dataset& ds, const py::object& config) {
          return app::evaluate_seeds(model, ds, run_config(config));
        },
        py::arg("model"), py::arg("dataset"), py::arg("config") = py::none());
  m.def("uncertainty",
        [](const nn::Model& model, const data::Dataset& ds, const py::object& config) {
          const auto r = app::uncertainty_report(model, ds, run_config(config));
          py::list nodes;
          for (const auto& u : r.nodes) {
            py::dict d;
            d["node"] = u.node;
            d["entropy"] = u.entropy;
            d["epistemic_var"] = u.epistemic_var;
            d["mutual_info"] = u.mutual_info;
            nodes.append(d);
          }
          py::dict out;
          out["nodes"] = nodes;
          out["mean_entropy"] = r.mean_entropy;
          out["mean_epistemic_var"] = r.mean_epistemic_var;
          out["mean_mutual_info"] = r.mean_mutual_info;
          out["ece"] = r.ece;
          return out;
        },
        py::arg("model"), py::arg("dataset"), py::arg("config") = py::none());
}
