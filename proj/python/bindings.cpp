#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "waferscope/checkpoint.hpp"
#include "waferscope/cli.hpp"
#include "waferscope/error.hpp"

namespace py = pybind11;
namespace ws = waferscope;

namespace {

std::optional<ws::ClassLabel> label_arg(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return ws::label_from_name(*s);
}

std::vector<std::pair<int, int>> defect_list(const ws::Wdm& w) {
  std::vector<std::pair<int, int>> out;
  out.reserve(w.defects.size());
  for (const auto& c : w.defects) out.emplace_back(c.i, c.j);
  return out;
}

ws::Wdm make_wdm(std::string id, int k, double radius, const std::vector<std::pair<int, int>>& defects,
                 const std::optional<std::string>& label) {
  ws::Wdm w;
  w.id = std::move(id);
  w.grid_size = k;
  w.radius = radius;
  for (auto [i, j] : defects) w.defects.push_back({i, j});
  w.label = label_arg(label);
  w.normalize();
  return w;
}

}  // namespace

PYBIND11_MODULE(_waferscope, m) {
  m.doc() = "Sparse convolutional wafer defect map classifier with GMM novelty detection";

  py::register_exception<ws::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ws::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ws::ContractError>(m, "ContractError", PyExc_RuntimeError);

  m.attr("CLASS_NAMES") = [] {
    std::vector<std::string> v;
    for (auto l : ws::kAllLabels) v.emplace_back(ws::label_name(l));
    return v;
  }();

  py::class_<ws::Wdm>(m, "Wdm")
      .def(py::init(&make_wdm), py::arg("id"), py::arg("grid_size"), py::arg("radius"), py::arg("defects"),
           py::arg("label") = std::nullopt)
      .def_readwrite("id", &ws::Wdm::id)
      .def_readonly("grid_size", &ws::Wdm::grid_size)
      .def_readonly("radius", &ws::Wdm::radius)
      .def_property_readonly("defects", &defect_list)
      .def_property(
          "label",
          [](const ws::Wdm& w) -> std::optional<std::string> {
            if (!w.label) return std::nullopt;
            return std::string(ws::label_name(*w.label));
          },
          [](ws::Wdm& w, const std::optional<std::string>& s) { w.label = label_arg(s); })
      .def("encode", &ws::encode_wdm)
      .def_static("decode", [](const std::string& line) { return ws::decode_wdm(line); })
      .def("__len__", [](const ws::Wdm& w) { return w.defects.size(); })
      .def("__eq__", [](const ws::Wdm& a, const ws::Wdm& b) { return a == b; })
      .def("__repr__", [](const ws::Wdm& w) {
        return "<Wdm " + w.id + " K=" + std::to_string(w.grid_size) + " defects=" + std::to_string(w.defects.size()) + ">";
      });

  m.def("read_jsonl", &ws::read_jsonl_file, py::arg("path"));
  m.def("write_jsonl", [](const std::string& path, const std::vector<ws::Wdm>& r) { ws::write_jsonl_file(path, r); },
        py::arg("path"), py::arg("records"));
  m.def(
      "synth_dataset",
      [](const std::map<std::string, int>& counts, int grid_size, std::optional<double> radius, std::uint64_t seed) {
        std::map<ws::ClassLabel, int> c;
        for (const auto& [k, n] : counts) c[ws::label_from_name(k)] = n;
        return ws::synth_dataset(c, grid_size, radius.value_or(ws::kDefaultRadiusFraction * grid_size), seed);
      },
      py::arg("counts"), py::arg("grid_size"), py::arg("radius") = std::nullopt, py::arg("seed") = 0);

  py::enum_<ws::GeoOrder>(m, "GeoOrder")
      .value("RotateFlipTranslate", ws::GeoOrder::RotateFlipTranslate)
      .value("TranslateFlipRotate", ws::GeoOrder::TranslateFlipRotate);
  py::class_<ws::GeoParams>(m, "GeoParams")
      .def(py::init([](int rot, bool flip, double dir, double dist, ws::GeoOrder order) {
             return ws::GeoParams{rot, flip, dir, dist, order};
           }),
           py::arg("rotation_deg") = 0, py::arg("flip") = false, py::arg("direction") = 0.0,
           py::arg("distance") = 0.0, py::arg("order") = ws::GeoOrder::RotateFlipTranslate)
      .def_readwrite("rotation_deg", &ws::GeoParams::rotation_deg)
      .def_readwrite("flip", &ws::GeoParams::flip)
      .def_readwrite("direction", &ws::GeoParams::direction)
      .def_readwrite("distance", &ws::GeoParams::distance)
      .def_readwrite("order", &ws::GeoParams::order)
      .def("__eq__", [](const ws::GeoParams& a, const ws::GeoParams& b) { return a == b; });
  m.def("apply_geometric", &ws::apply_geometric, py::arg("wdm"), py::arg("params"));
  m.def("inverse_geometric", &ws::inverse_geometric, py::arg("params"));

  py::class_<ws::Sscn>(m, "Sscn")
      .def_property_readonly("num_classes", [](const ws::Sscn& s) { return s.config.num_classes; })
      .def_property_readonly("grid_size", [](const ws::Sscn& s) { return s.config.grid_size; })
      .def_property_readonly("latent_dim", [](const ws::Sscn& s) { return s.config.latent_dim; })
      .def("parameter_count", &ws::Sscn::parameter_count)
      .def(
          "forward",
          [](const ws::Sscn& s, const ws::Wdm& w) {
            auto out = ws::forward(s, ws::to_tensor(w), ws::NormMode::Eval);
            return py::make_tuple(out.latent, out.scores);
          },
          py::arg("wdm"), "Eval-mode forward; returns (latent, class scores).");
  m.def(
      "build_network",
      [](int num_classes, int grid_size, std::vector<int> channels, int latent_dim, std::uint64_t seed) {
        ws::SscnConfig c;
        c.num_classes = num_classes;
        c.grid_size = grid_size;
        c.num_blocks = static_cast<int>(channels.size());
        c.block_channels = std::move(channels);
        c.latent_dim = latent_dim;
        c.validate();
        return ws::build_network(c, seed);
      },
      py::arg("num_classes"), py::arg("grid_size"), py::arg("block_channels") = std::vector<int>{8, 16, 16, 32, 32},
      py::arg("latent_dim") = 32, py::arg("seed") = 0);
  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        auto ck = ws::load_checkpoint(path);
        std::vector<std::string> classes;
        for (auto l : ck.classes) classes.emplace_back(ws::label_name(l));
        return py::make_tuple(std::move(ck.model), classes);
      },
      py::arg("path"), "Returns (network, class names).");

  py::class_<ws::Gmm>(m, "Gmm")
      .def_readonly("dim", &ws::Gmm::dim)
      .def_readonly("diagonal", &ws::Gmm::diagonal)
      .def_readonly("weights", &ws::Gmm::weights)
      .def_readonly("means", &ws::Gmm::means)
      .def("score", [](const ws::Gmm& g, const std::vector<double>& x) { return ws::gmm_score(g, x); }, py::arg("x"),
           "Negative log-likelihood; larger is more novel.")
      .def("log_likelihood", [](const ws::Gmm& g, const ws::Rows& x) { return ws::gmm_log_likelihood(g, x); });
  m.def(
      "gmm_fit_em",
      [](const ws::Rows& x, const std::vector<int>& labels, int components, int max_iter, double tol) {
        ws::GmmFitOptions o;
        o.components = components;
        o.max_iter = max_iter;
        o.tol = tol;
        auto r = ws::gmm_fit_em(x, labels, o);
        return py::make_tuple(std::move(r.gmm), r.objective, r.converged);
      },
      py::arg("x"), py::arg("labels"), py::arg("components"), py::arg("max_iter") = 500, py::arg("tol") = 1e-9,
      "Returns (gmm, objective per iteration, converged).");
  m.def(
      "calibrate_threshold",
      [](const std::vector<double>& s, double alpha) { return ws::calibrate_threshold(s, alpha).eta; },
      py::arg("scores"), py::arg("alpha"));

  m.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return ws::roc_auc(s, y); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "auc_1vsrest",
      [](const ws::Rows& s, const std::vector<int>& y, const std::vector<double>& f) { return ws::auc_1vsrest(s, y, f); },
      py::arg("score_matrix"), py::arg("labels"), py::arg("class_freqs") = std::vector<double>{});
  m.def("auc_1vs1", [](const ws::Rows& s, const std::vector<int>& y) { return ws::auc_1vs1(s, y); },
        py::arg("score_matrix"), py::arg("labels"));
  m.def(
      "mann_whitney_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        auto r = ws::mann_whitney_test(a, b);
        return py::make_tuple(r.statistic, r.p_value);
      },
      py::arg("a"), py::arg("b"), "One-sided test that a tends to exceed b; returns (U, p).");
  m.def(
      "wilcoxon_signed_rank",
      [](const std::vector<double>& d) {
        auto r = ws::wilcoxon_signed_rank(d);
        return py::make_tuple(r.statistic, r.p_value);
      },
      py::arg("diffs"), "One-sided test that the differences are positive; returns (W, p).");
  m.def("average_rank", &ws::average_rank, py::arg("table"), "table[trial][method]; rank 1 is the largest value.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = ws::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one waferscope subcommand; returns (exit code, stdout, stderr).");
}
