#include "xcg/error.hpp"
#include "xcg/io.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace xcg {

template <class Archive>
void serialize(Archive& ar, Cell& c) {
    ar(c.cell_id, c.x_mm, c.y_mm, c.phenotype_id);
}

template <class Archive>
void save(Archive& ar, const SparseMatrix& m) {
    const std::int32_t rows = m.rows();
    const std::int32_t cols = m.cols();
    ar(rows, cols, m.row_ptr(), m.col_idx(), m.values());
}

template <class Archive>
void load(Archive& ar, SparseMatrix& m) {
    std::int32_t rows = 0;
    std::int32_t cols = 0;
    std::vector<std::int64_t> row_ptr;
    std::vector<std::int32_t> col_idx;
    std::vector<double> values;
    ar(rows, cols, row_ptr, col_idx, values);
    m = SparseMatrix::from_csr(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

template <class Archive>
void save(Archive& ar, const CellGraph& g) {
    ar(g.graph_id, g.n_phenotypes, g.cells, g.adjacency);
}

template <class Archive>
void load(Archive& ar, CellGraph& g) {
    ar(g.graph_id, g.n_phenotypes, g.cells, g.adjacency);
    g.features = one_hot_features(g.cells, g.n_phenotypes);
}

template <class Archive>
void save(Archive& ar, const PatientBag& b) {
    ar(b.patient_id, b.graphs, b.os_months, b.event, static_cast<std::uint8_t>(b.stage),
       static_cast<std::uint8_t>(b.survival_class));
}

template <class Archive>
void load(Archive& ar, PatientBag& b) {
    std::uint8_t stage = 0;
    std::uint8_t cls = 0;
    ar(b.patient_id, b.graphs, b.os_months, b.event, stage, cls);
    require(stage <= 1 && cls <= 2, "cache", "corrupt dataset cache");
    b.stage = static_cast<StageGroup>(stage);
    b.survival_class = static_cast<SurvivalClass>(cls);
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1, "io",
            "sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return out.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "io", "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "io", "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), "io", "write failed for " + path.string());
}

void save_dataset_cache(const fs::path& path, const Dataset& ds, const std::string& input_hash) {
    std::ostringstream buf(std::ios::binary);
    {
        cereal::PortableBinaryOutputArchive ar(buf);
        ar(kDatasetCacheVersion, input_hash, ds.n_phenotypes, ds.k, ds.phenotype_names,
           ds.graph_owner, ds.graphs, ds.bags);
    }
    // Write then rename so a concurrent reader never sees a partial file.
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, buf.str());
    fs::rename(tmp, path);
}

bool load_dataset_cache(const fs::path& path, const std::string& input_hash, Dataset& ds) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) return false;
    try {
        cereal::PortableBinaryInputArchive ar(in);
        std::uint32_t version = 0;
        std::string hash;
        ar(version, hash);
        if (version != kDatasetCacheVersion || hash != input_hash) return false;
        Dataset loaded;
        ar(loaded.n_phenotypes, loaded.k, loaded.phenotype_names, loaded.graph_owner, loaded.graphs,
           loaded.bags);
        ds = std::move(loaded);
        return true;
    } catch (const cereal::Exception&) {
        return false;
    } catch (const Error&) {
        return false;
    }
}

}  // namespace xcg
