#pragma once

#include "xcg/sparse.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xcg {

enum class StageGroup : std::uint8_t { early = 0, late = 1 };
enum class SurvivalClass : std::uint8_t { short_term = 0, long_term = 1, excluded = 2 };

/// Follow-up threshold (months) separating short- from long-term survival.
inline constexpr double kSurvivalThresholdMonths = 36.0;

std::string to_string(StageGroup stage);
std::string to_string(SurvivalClass cls);
StageGroup parse_stage(const std::string& text);

struct Cell {
    std::int64_t cell_id = 0;
    double x_mm = 0.0;
    double y_mm = 0.0;
    std::int32_t phenotype_id = 0;

    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Undirected KNN cell graph. Node i is cells[i]; adjacency is binary,
/// symmetric and has an empty diagonal; features is the n x P one-hot
/// phenotype matrix.
struct CellGraph {
    std::string graph_id;
    std::int32_t n_phenotypes = 0;
    std::vector<Cell> cells;
    SparseMatrix adjacency;
    Matrix features;

    std::int32_t size() const noexcept { return static_cast<std::int32_t>(cells.size()); }
};

struct PatientBag {
    std::string patient_id;
    std::vector<std::int32_t> graphs;  // indices into Dataset::graphs
    double os_months = 0.0;
    bool event = false;
    StageGroup stage = StageGroup::early;
    SurvivalClass survival_class = SurvivalClass::excluded;
};

struct Dataset {
    std::int32_t n_phenotypes = 0;
    std::int32_t k = 3;
    std::vector<std::string> phenotype_names;
    std::vector<std::string> graph_owner;  // patient_id per graph
    std::vector<CellGraph> graphs;
    std::vector<PatientBag> bags;
};

// Rows of the cells.csv / patients.csv tables.
struct CellRow {
    std::string patient_id;
    std::string graph_id;
    Cell cell;
};

struct PatientRow {
    std::string patient_id;
    double os_months = 0.0;
    bool event = false;
    StageGroup stage = StageGroup::early;
};

SurvivalClass classify_survival(double os_months, bool event);

Matrix one_hot_features(std::span<const Cell> cells, std::int32_t n_phenotypes);

/// Exact KNN by full pairwise distances. Each node links to its k nearest
/// other cells (distance ties broken by lower cell_id) and the directed
/// edge set is symmetrized by union.
CellGraph build_knn_graph(std::vector<Cell> cells, std::int32_t k, std::int32_t n_phenotypes,
                          std::string graph_id = {});

/// Directed k-nearest neighbour lists (node indices), before symmetrization.
std::vector<std::vector<std::int32_t>> knn_lists(std::span<const Cell> cells, std::int32_t k);

/// One bag per patient row, in patient-table order. `graph_owner[g]` is the
/// patient id of graph g.
std::vector<PatientBag> assemble_bags(std::span<const std::string> graph_owner,
                                      std::span<const PatientRow> patients);

/// Groups cell rows into graphs (first-appearance order), builds KNN graphs
/// and assembles bags.
Dataset build_dataset(std::span<const CellRow> cells, std::span<const PatientRow> patients,
                      std::int32_t k, std::int32_t n_phenotypes);

/// Uniform points on the unit disk with uniform phenotypes, ids 0..n-1.
std::vector<Cell> synth_generate(std::int32_t n_nodes, std::int32_t n_phenotypes,
                                 std::uint64_t seed);

struct PlantedCohortOptions {
    std::int32_t n_phenotypes = 6;
    std::int32_t cells_per_graph = 80;
    std::int32_t graphs_per_patient = 1;
    // Fraction of a short survivor's cells converted into the signal cluster
    // ranges over [min_cluster_fraction, max_cluster_fraction].
    double min_cluster_fraction = 0.25;
    double max_cluster_fraction = 0.55;
    double long_event_rate = 0.2;
};

struct PlantedCohort {
    std::vector<CellRow> cells;
    std::vector<PatientRow> patients;
};

/// Alternating short/long survivors. Short survivors carry a spatially
/// compact cluster of `signal_phenotype` cells whose size grows with hazard
/// (shorter survival time); long survivors only carry the phenotype at the
/// uniform background rate.
PlantedCohort synth_planted_cohort(std::int32_t n_patients, std::int32_t signal_phenotype,
                                   std::uint64_t seed, const PlantedCohortOptions& options = {});

}  // namespace xcg
