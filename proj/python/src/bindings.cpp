#include "xcg/cli.hpp"
#include "xcg/error.hpp"
#include "xcg/gridattr.hpp"
#include "xcg/io.hpp"
#include "xcg/lrp.hpp"
#include "xcg/survival.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace xcg;

namespace {

std::vector<Cell> to_cells(const std::vector<std::tuple<std::int64_t, double, double, std::int32_t>>& rows) {
    std::vector<Cell> cells;
    cells.reserve(rows.size());
    for (const auto& [id, x, y, ph] : rows) cells.push_back({id, x, y, ph});
    return cells;
}

std::unique_ptr<bool[]> flags(const std::vector<bool>& v) {
    std::unique_ptr<bool[]> out(new bool[v.size()]);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
    return out;
}

std::vector<std::pair<std::int32_t, std::int32_t>> edges(const CellGraph& g) {
    std::vector<std::pair<std::int32_t, std::int32_t>> out;
    for (std::int32_t i = 0; i < g.size(); ++i) {
        for (auto j : g.adjacency.row_indices(i)) {
            if (i < j) out.emplace_back(i, j);
        }
    }
    return out;
}

// Opaque holder; stl.h would otherwise convert the variant itself.
struct PyModel {
    Model model;
};

}  // namespace

PYBIND11_MODULE(_xcg, m) {
    m.doc() = "Cell-graph survival models with grid-tiled subgraph relevance";

    py::register_exception<Error>(m, "XcgError");

    py::class_<CellGraph>(m, "CellGraph")
        .def_readonly("graph_id", &CellGraph::graph_id)
        .def_property_readonly("n_nodes", &CellGraph::size)
        .def_property_readonly("edges", &edges)
        .def_property_readonly("adjacency", [](const CellGraph& g) { return g.adjacency.to_dense(); })
        .def_readonly("features", &CellGraph::features);

    m.def(
        "build_knn_graph",
        [](const std::vector<std::tuple<std::int64_t, double, double, std::int32_t>>& cells, std::int32_t k,
           std::int32_t n_phenotypes, const std::string& graph_id) {
            return build_knn_graph(to_cells(cells), k, n_phenotypes, graph_id);
        },
        py::arg("cells"), py::arg("k") = 3, py::arg("n_phenotypes"), py::arg("graph_id") = "",
        "Symmetrized KNN graph from (cell_id, x_mm, y_mm, phenotype_id) rows.");

    m.def(
        "synth_generate",
        [](std::int32_t n, std::int32_t n_phenotypes, std::uint64_t seed) {
            std::vector<std::tuple<std::int64_t, double, double, std::int32_t>> out;
            for (const auto& c : synth_generate(n, n_phenotypes, seed)) out.emplace_back(c.cell_id, c.x_mm, c.y_mm, c.phenotype_id);
            return out;
        },
        py::arg("n_nodes"), py::arg("n_phenotypes"), py::arg("seed"));

    m.def(
        "cox_loss",
        [](const std::vector<double>& risks, const std::vector<double>& times, const std::vector<bool>& events) {
            const auto f = flags(events);
            const auto loss = cox_loss(risks, times, std::span<const bool>(f.get(), events.size()));
            return py::make_tuple(loss.value, loss.gradient);
        },
        py::arg("risks"), py::arg("times"), py::arg("events"), "Returns (value, gradient).");

    m.def(
        "concordance_index",
        [](const std::vector<double>& risks, const std::vector<double>& times, const std::vector<bool>& events) {
            const auto f = flags(events);
            return concordance_index(risks, times, std::span<const bool>(f.get(), events.size()));
        },
        py::arg("risks"), py::arg("times"), py::arg("events"));

    m.def(
        "auroc",
        [](const std::vector<double>& scores, const std::vector<bool>& labels) {
            const auto f = flags(labels);
            return auroc(scores, std::span<const bool>(f.get(), labels.size()));
        },
        py::arg("scores"), py::arg("labels"));

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("task", [](const PyModel& p) { return to_string(task_of(p.model)); })
        .def("to_json", [](const PyModel& p) { return model_to_json(p.model).dump(); });

    m.def("load_model", [](const std::string& path) { return PyModel{load_model(path)}; }, py::arg("path"));

    m.def(
        "explain",
        [](const PyModel& holder, const CellGraph& graph, const std::string& target, double gamma, double tile,
           double stride, int threads) {
            require_explainable(holder.model);
            const auto& cls = std::get<ClassificationModel>(holder.model);
            LrpConfig cfg;
            cfg.gamma = gamma;
            cfg.target = parse_target_class(target);
            const auto trace = prepare_lrp(cls, graph, cfg);
            py::dict out;
            out["target_logit"] = trace.target_logit;
            out["logits"] = RowVector(trace.forward.logits);
            out["node_relevance"] = Vector(node_relevance(trace));
            out["grid_relevance"] = grid_attribution(trace, {tile, stride}, threads).relevance;
            return out;
        },
        py::arg("model"), py::arg("graph"), py::arg("target") = "predicted", py::arg("gamma") = 0.1,
        py::arg("tile") = 0.05, py::arg("stride") = 0.025, py::arg("threads") = 1,
        "Node relevance and the shifted-grid heatmap of one graph.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a subcommand in-process; returns (exit_code, stdout, stderr).");
}
