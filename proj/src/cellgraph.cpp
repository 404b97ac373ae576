#include "xcg/cellgraph.hpp"

#include "xcg/error.hpp"
#include "xcg/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace xcg {

std::string to_string(StageGroup stage) { return stage == StageGroup::early ? "early" : "late"; }

std::string to_string(SurvivalClass cls) {
    switch (cls) {
        case SurvivalClass::short_term: return "short";
        case SurvivalClass::long_term: return "long";
        case SurvivalClass::excluded: return "excluded";
    }
    return "excluded";
}

StageGroup parse_stage(const std::string& text) {
    if (text == "early") return StageGroup::early;
    if (text == "late") return StageGroup::late;
    throw Error("schema", "stage_group must be 'early' or 'late', got '" + text + "'");
}

SurvivalClass classify_survival(double os_months, bool event) {
    if (os_months > kSurvivalThresholdMonths) return SurvivalClass::long_term;
    return event ? SurvivalClass::short_term : SurvivalClass::excluded;
}

Matrix one_hot_features(std::span<const Cell> cells, std::int32_t n_phenotypes) {
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(cells.size()), n_phenotypes);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        x(static_cast<Eigen::Index>(i), cells[i].phenotype_id) = 1.0;
    }
    return x;
}

std::vector<std::vector<std::int32_t>> knn_lists(std::span<const Cell> cells, std::int32_t k) {
    require(k > 0, "precondition", "k must be positive");
    const auto n = static_cast<std::int32_t>(cells.size());
    require(n >= k + 1, "insufficient nodes",
            "insufficient nodes: " + std::to_string(n) + " cells for k=" + std::to_string(k));

    struct Candidate {
        double d2;
        std::int64_t id;
        std::int32_t index;
    };
    const auto closer = [](const Candidate& a, const Candidate& b) {
        return a.d2 != b.d2 ? a.d2 < b.d2 : a.id < b.id;
    };

    std::vector<std::vector<std::int32_t>> lists(static_cast<std::size_t>(n));
    std::vector<Candidate> candidates;
    candidates.reserve(static_cast<std::size_t>(n));
    for (std::int32_t i = 0; i < n; ++i) {
        candidates.clear();
        for (std::int32_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = cells[j].x_mm - cells[i].x_mm;
            const double dy = cells[j].y_mm - cells[i].y_mm;
            candidates.push_back({dx * dx + dy * dy, cells[j].cell_id, j});
        }
        std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), closer);
        auto& out = lists[static_cast<std::size_t>(i)];
        for (std::int32_t r = 0; r < k; ++r) out.push_back(candidates[r].index);
    }
    return lists;
}

CellGraph build_knn_graph(std::vector<Cell> cells, std::int32_t k, std::int32_t n_phenotypes,
                          std::string graph_id) {
    require(n_phenotypes > 0, "precondition", "n_phenotypes must be positive");
    std::unordered_set<std::int64_t> ids;
    for (const auto& c : cells) {
        require(std::isfinite(c.x_mm) && std::isfinite(c.y_mm), "precondition",
                "cell " + std::to_string(c.cell_id) + " has non-finite coordinates");
        require(c.phenotype_id >= 0 && c.phenotype_id < n_phenotypes, "precondition",
                "cell " + std::to_string(c.cell_id) + " phenotype_id " +
                    std::to_string(c.phenotype_id) + " outside [0, " +
                    std::to_string(n_phenotypes) + ")");
        require(ids.insert(c.cell_id).second, "precondition",
                "duplicate cell_id " + std::to_string(c.cell_id) + " in graph " + graph_id);
    }

    const auto lists = knn_lists(cells, k);
    std::vector<Triplet> edges;
    edges.reserve(lists.size() * static_cast<std::size_t>(k) * 2);
    for (std::size_t i = 0; i < lists.size(); ++i) {
        for (auto j : lists[i]) {
            edges.push_back({static_cast<std::int32_t>(i), j, 1.0});
            edges.push_back({j, static_cast<std::int32_t>(i), 1.0});
        }
    }
    const auto n = static_cast<std::int32_t>(cells.size());
    // Mutual neighbours sum to 2 in from_triplets; reset every stored entry to 1.
    auto summed = SparseMatrix::from_triplets(n, n, std::move(edges));
    std::vector<double> ones(summed.values().size(), 1.0);

    CellGraph g;
    g.graph_id = std::move(graph_id);
    g.n_phenotypes = n_phenotypes;
    g.adjacency = SparseMatrix::from_csr(n, n, summed.row_ptr(), summed.col_idx(), std::move(ones));
    g.features = one_hot_features(cells, n_phenotypes);
    g.cells = std::move(cells);
    return g;
}

std::vector<PatientBag> assemble_bags(std::span<const std::string> graph_owner,
                                      std::span<const PatientRow> patients) {
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t p = 0; p < patients.size(); ++p) {
        require(row_of.emplace(patients[p].patient_id, p).second, "schema",
                "duplicate patient_id " + patients[p].patient_id);
        require(std::isfinite(patients[p].os_months) && patients[p].os_months >= 0.0, "schema",
                "patient " + patients[p].patient_id + " has invalid os_months");
    }

    std::vector<PatientBag> bags(patients.size());
    for (std::size_t p = 0; p < patients.size(); ++p) {
        const auto& row = patients[p];
        bags[p].patient_id = row.patient_id;
        bags[p].os_months = row.os_months;
        bags[p].event = row.event;
        bags[p].stage = row.stage;
        bags[p].survival_class = classify_survival(row.os_months, row.event);
    }
    for (std::size_t g = 0; g < graph_owner.size(); ++g) {
        const auto it = row_of.find(graph_owner[g]);
        require(it != row_of.end(), "orphan",
                "graph " + std::to_string(g) + " belongs to unknown patient_id '" +
                    graph_owner[g] + "'");
        bags[it->second].graphs.push_back(static_cast<std::int32_t>(g));
    }
    for (const auto& bag : bags) {
        require(!bag.graphs.empty(), "schema", "patient " + bag.patient_id + " has no cell graphs");
    }
    return bags;
}

Dataset build_dataset(std::span<const CellRow> cells, std::span<const PatientRow> patients,
                      std::int32_t k, std::int32_t n_phenotypes) {
    Dataset ds;
    ds.k = k;
    ds.n_phenotypes = n_phenotypes;

    std::unordered_map<std::string, std::size_t> graph_index;
    std::vector<std::string> graph_ids;
    std::vector<std::vector<Cell>> graph_cells;
    for (const auto& row : cells) {
        auto [it, inserted] = graph_index.emplace(row.graph_id, graph_ids.size());
        if (inserted) {
            graph_ids.push_back(row.graph_id);
            ds.graph_owner.push_back(row.patient_id);
            graph_cells.emplace_back();
        } else {
            require(ds.graph_owner[it->second] == row.patient_id, "schema",
                    "graph " + row.graph_id + " is assigned to more than one patient");
        }
        graph_cells[it->second].push_back(row.cell);
    }

    ds.bags = assemble_bags(ds.graph_owner, patients);
    ds.graphs.reserve(graph_ids.size());
    for (std::size_t g = 0; g < graph_ids.size(); ++g) {
        ds.graphs.push_back(build_knn_graph(std::move(graph_cells[g]), k, n_phenotypes, graph_ids[g]));
    }
    return ds;
}

std::vector<Cell> synth_generate(std::int32_t n_nodes, std::int32_t n_phenotypes,
                                 std::uint64_t seed) {
    require(n_nodes >= 4, "precondition", "synth_generate needs at least 4 nodes");
    require(n_phenotypes > 0, "precondition", "n_phenotypes must be positive");
    Rng rng(seed);
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(n_nodes));
    for (std::int32_t i = 0; i < n_nodes; ++i) {
        double x = 0.0;
        double y = 0.0;
        do {
            x = rng.uniform(-1.0, 1.0);
            y = rng.uniform(-1.0, 1.0);
        } while (x * x + y * y > 1.0);
        const auto phenotype = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_phenotypes)));
        cells.push_back({i, x, y, phenotype});
    }
    return cells;
}

PlantedCohort synth_planted_cohort(std::int32_t n_patients, std::int32_t signal_phenotype,
                                   std::uint64_t seed, const PlantedCohortOptions& opt) {
    require(n_patients > 0 && n_patients % 2 == 0, "precondition", "n_patients must be even");
    require(signal_phenotype >= 0 && signal_phenotype < opt.n_phenotypes, "precondition",
            "signal_phenotype outside [0, n_phenotypes)");
    require(opt.cells_per_graph >= 8 && opt.graphs_per_patient >= 1, "precondition",
            "planted cohort needs >= 8 cells per graph and >= 1 graph per patient");

    Rng rng(seed);
    PlantedCohort cohort;
    // Spot side scales with sqrt(cells) to keep density near 2500 cells/mm^2.
    const double side = 0.02 * std::sqrt(static_cast<double>(opt.cells_per_graph));
    const auto n = opt.cells_per_graph;

    for (std::int32_t p = 0; p < n_patients; ++p) {
        char pid[32];
        std::snprintf(pid, sizeof pid, "P%04d", p);
        const bool is_short = p % 2 == 0;
        const double dose = rng.uniform();

        PatientRow row;
        row.patient_id = pid;
        if (is_short) {
            row.os_months = 1.0 + 0.9 * kSurvivalThresholdMonths * (1.0 - dose);
            row.event = true;
        } else {
            row.os_months = kSurvivalThresholdMonths + 4.0 + 60.0 * rng.uniform();
            row.event = rng.uniform() < opt.long_event_rate;
        }
        row.stage = rng.uniform() < 0.5 ? StageGroup::early : StageGroup::late;
        cohort.patients.push_back(row);

        for (std::int32_t g = 0; g < opt.graphs_per_patient; ++g) {
            std::vector<Cell> cells(static_cast<std::size_t>(n));
            for (std::int32_t i = 0; i < n; ++i) {
                cells[i] = {i, rng.uniform(0.0, side), rng.uniform(0.0, side),
                            static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(opt.n_phenotypes)))};
            }
            if (is_short) {
                const double cx = rng.uniform(0.25 * side, 0.75 * side);
                const double cy = rng.uniform(0.25 * side, 0.75 * side);
                const double fraction = opt.min_cluster_fraction +
                                        (opt.max_cluster_fraction - opt.min_cluster_fraction) * dose;
                const auto m = static_cast<std::size_t>(std::lround(fraction * n));
                std::vector<std::int32_t> order(static_cast<std::size_t>(n));
                std::iota(order.begin(), order.end(), 0);
                const auto d2 = [&](std::int32_t i) {
                    const double dx = cells[i].x_mm - cx;
                    const double dy = cells[i].y_mm - cy;
                    return dx * dx + dy * dy;
                };
                std::stable_sort(order.begin(), order.end(),
                                 [&](std::int32_t a, std::int32_t b) { return d2(a) < d2(b); });
                for (std::size_t r = 0; r < m; ++r) cells[order[r]].phenotype_id = signal_phenotype;
            }
            const std::string gid = row.patient_id + "_g" + std::to_string(g);
            for (const auto& c : cells) cohort.cells.push_back({row.patient_id, gid, c});
        }
    }
    return cohort;
}

}  // namespace xcg
