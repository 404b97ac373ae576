#include "xcg/error.hpp"
#include "xcg/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace xcg {

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Header-indexed CSV reader with row numbers for error messages.
class CsvTable {
public:
    CsvTable(const fs::path& path, const std::vector<std::string>& required) : path_(path) {
        std::ifstream in(path);
        require(in.good(), "io", "cannot open " + path.string());
        std::string line;
        require(static_cast<bool>(std::getline(in, line)), "schema", path.string() + ": empty file");
        strip(line);
        if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        const auto header = split(line);
        for (std::size_t i = 0; i < header.size(); ++i) column_[header[i]] = i;
        for (const auto& name : required) {
            require(column_.count(name) > 0, "schema",
                    path.string() + ": missing required column '" + name + "'");
        }
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            strip(line);
            if (line.empty()) continue;
            auto fields = split(line);
            require(fields.size() == header.size(), "schema",
                    path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
            rows_.push_back({line_no, std::move(fields)});
        }
    }

    std::size_t size() const { return rows_.size(); }
    bool has(const std::string& name) const { return column_.count(name) > 0; }

    const std::string& text(std::size_t r, const std::string& name) const {
        return rows_[r].fields[column_.at(name)];
    }

    double real(std::size_t r, const std::string& name) const {
        const auto& s = text(r, name);
        double v = 0.0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        require(ec == std::errc() && end == s.data() + s.size(), "schema",
                where(r) + ": column '" + name + "' is not a number: '" + s + "'");
        return v;
    }

    std::int64_t integer(std::size_t r, const std::string& name) const {
        const auto& s = text(r, name);
        std::int64_t v = 0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        require(ec == std::errc() && end == s.data() + s.size(), "schema",
                where(r) + ": column '" + name + "' is not an integer: '" + s + "'");
        return v;
    }

    std::string where(std::size_t r) const {
        return path_.string() + ":" + std::to_string(rows_[r].line);
    }

private:
    struct Row {
        std::size_t line;
        std::vector<std::string> fields;
    };

    static void strip(std::string& line) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    }

    fs::path path_;
    std::unordered_map<std::string, std::size_t> column_;
    std::vector<Row> rows_;
};

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

}  // namespace

std::string format_double(double value) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return {buf, end};
}

std::vector<CellRow> read_cells_csv(const fs::path& path) {
    const CsvTable t(path, {"patient_id", "graph_id", "cell_id", "x_mm", "y_mm", "phenotype_id"});
    std::vector<CellRow> rows;
    rows.reserve(t.size());
    for (std::size_t r = 0; r < t.size(); ++r) {
        CellRow row;
        row.patient_id = t.text(r, "patient_id");
        row.graph_id = t.text(r, "graph_id");
        row.cell.cell_id = t.integer(r, "cell_id");
        row.cell.x_mm = t.real(r, "x_mm");
        row.cell.y_mm = t.real(r, "y_mm");
        row.cell.phenotype_id = static_cast<std::int32_t>(t.integer(r, "phenotype_id"));
        require(std::isfinite(row.cell.x_mm) && std::isfinite(row.cell.y_mm), "schema",
                t.where(r) + ": non-finite coordinates");
        require(row.cell.phenotype_id >= 0, "schema", t.where(r) + ": negative phenotype_id");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<PatientRow> read_patients_csv(const fs::path& path) {
    const CsvTable t(path, {"patient_id", "os_months", "event", "stage_group"});
    std::vector<PatientRow> rows;
    for (std::size_t r = 0; r < t.size(); ++r) {
        PatientRow row;
        row.patient_id = t.text(r, "patient_id");
        row.os_months = t.real(r, "os_months");
        const auto event = t.integer(r, "event");
        require(event == 0 || event == 1, "schema", t.where(r) + ": event must be 0 or 1");
        row.event = event == 1;
        try {
            row.stage = parse_stage(t.text(r, "stage_group"));
        } catch (const Error& e) {
            throw Error("schema", t.where(r) + ": " + e.what());
        }
        require(std::isfinite(row.os_months) && row.os_months >= 0.0, "schema",
                t.where(r) + ": os_months must be a nonnegative number");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<PhenotypeName> read_phenotypes_csv(const fs::path& path) {
    const CsvTable t(path, {"phenotype_id", "name"});
    std::vector<PhenotypeName> rows;
    for (std::size_t r = 0; r < t.size(); ++r) {
        rows.push_back({static_cast<std::int32_t>(t.integer(r, "phenotype_id")), t.text(r, "name")});
    }
    return rows;
}

void write_cells_csv(const fs::path& path, const std::vector<CellRow>& rows) {
    std::string out = "patient_id,graph_id,cell_id,x_mm,y_mm,phenotype_id\n";
    for (const auto& r : rows) {
        out += r.patient_id + "," + r.graph_id + "," + std::to_string(r.cell.cell_id) + "," +
               format_double(r.cell.x_mm) + "," + format_double(r.cell.y_mm) + "," +
               std::to_string(r.cell.phenotype_id) + "\n";
    }
    write_text(path, out);
}

void write_patients_csv(const fs::path& path, const std::vector<PatientRow>& rows) {
    std::string out = "patient_id,os_months,event,stage_group\n";
    for (const auto& r : rows) {
        out += r.patient_id + "," + format_double(r.os_months) + "," + (r.event ? "1" : "0") + "," +
               to_string(r.stage) + "\n";
    }
    write_text(path, out);
}

void write_phenotypes_csv(const fs::path& path, const std::vector<PhenotypeName>& rows) {
    std::string out = "phenotype_id,name\n";
    for (const auto& r : rows) out += std::to_string(r.phenotype_id) + "," + r.name + "\n";
    write_text(path, out);
}

void write_predictions_csv(const fs::path& path, const std::vector<PredictionRow>& rows) {
    std::string out = "patient_id,fold,seed,risk\n";
    for (const auto& r : rows) {
        out += r.patient_id + "," + std::to_string(r.fold) + "," + std::to_string(r.seed) + "," +
               format_double(r.risk) + "\n";
    }
    write_text(path, out);
}

std::vector<PredictionRow> read_predictions_csv(const fs::path& path) {
    const CsvTable t(path, {"patient_id", "fold", "seed", "risk"});
    std::vector<PredictionRow> rows;
    for (std::size_t r = 0; r < t.size(); ++r) {
        rows.push_back({t.text(r, "patient_id"), static_cast<std::int32_t>(t.integer(r, "fold")),
                        t.integer(r, "seed"), t.real(r, "risk")});
    }
    return rows;
}

void append_relevance_csv(std::string& out, const RelevanceMap& map, const CellGraph& graph,
                          Interval interval, bool header) {
    require(map.relevance.size() == graph.cells.size(), "precondition",
            "relevance map does not match graph " + graph.graph_id);
    if (header) out += "graph_id,cell_id,x_mm,y_mm,phenotype_id,relevance,relevance_normalized\n";
    for (std::size_t i = 0; i < graph.cells.size(); ++i) {
        const auto& c = graph.cells[i];
        out += graph.graph_id + "," + std::to_string(c.cell_id) + "," + format_double(c.x_mm) + "," +
               format_double(c.y_mm) + "," + std::to_string(c.phenotype_id) + "," +
               format_double(map.relevance[i]) + "," +
               format_double(normalize(map.relevance[i], interval)) + "\n";
    }
}

std::vector<RelevanceRecord> read_relevance_csv(const fs::path& path) {
    const CsvTable t(path, {"graph_id", "cell_id", "relevance"});
    std::vector<RelevanceRecord> rows;
    rows.reserve(t.size());
    for (std::size_t r = 0; r < t.size(); ++r) {
        rows.push_back({t.text(r, "graph_id"), t.integer(r, "cell_id"), t.real(r, "relevance")});
    }
    return rows;
}

}  // namespace xcg
