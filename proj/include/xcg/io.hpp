#pragma once

#include "xcg/cellgraph.hpp"
#include "xcg/gridattr.hpp"
#include "xcg/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xcg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV tables

std::vector<CellRow> read_cells_csv(const fs::path& path);
std::vector<PatientRow> read_patients_csv(const fs::path& path);

struct PhenotypeName {
    std::int32_t phenotype_id = 0;
    std::string name;
};

std::vector<PhenotypeName> read_phenotypes_csv(const fs::path& path);

void write_cells_csv(const fs::path& path, const std::vector<CellRow>& rows);
void write_patients_csv(const fs::path& path, const std::vector<PatientRow>& rows);
void write_phenotypes_csv(const fs::path& path, const std::vector<PhenotypeName>& rows);

/// Shortest decimal text that round-trips the double.
std::string format_double(double value);

struct PredictionRow {
    std::string patient_id;
    std::int32_t fold = -1;
    std::int64_t seed = -1;  // -1 marks an ensemble mean
    double risk = 0.0;
};

void write_predictions_csv(const fs::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const fs::path& path);

/// relevance.csv rows for one graph; `header` writes the column line first.
void append_relevance_csv(std::string& out, const RelevanceMap& map, const CellGraph& graph,
                          Interval interval, bool header);

/// Relevance values per graph id, in file order of cells.
struct RelevanceRecord {
    std::string graph_id;
    std::int64_t cell_id = 0;
    double relevance = 0.0;
};

std::vector<RelevanceRecord> read_relevance_csv(const fs::path& path);

// ---------------------------------------------------------------------------
// Model weights (versioned JSON)

inline constexpr int kModelSchemaVersion = 1;

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
void save_model(const fs::path& path, const Model& model);
Model load_model(const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset cache

inline constexpr std::uint32_t kDatasetCacheVersion = 1;

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

void save_dataset_cache(const fs::path& path, const Dataset& dataset, const std::string& input_hash);

/// Loads a cache and returns true only when its version and input hash match.
bool load_dataset_cache(const fs::path& path, const std::string& input_hash, Dataset& dataset);

}  // namespace xcg
