#include "xcg/cli.hpp"

#include "xcg/analysis.hpp"
#include "xcg/error.hpp"
#include "xcg/gridattr.hpp"
#include "xcg/io.hpp"
#include "xcg/lrp.hpp"
#include "xcg/parallel.hpp"
#include "xcg/random.hpp"
#include "xcg/survival.hpp"
#include "xcg/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace xcg::cli {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

struct Options {
    fs::path data;
    fs::path out;
    fs::path model;
    fs::path run;
    fs::path relevance;
    std::int32_t k = 3;
    std::string task = "regression";
    bool fuse_stage = true;
    std::int32_t ensemble = 1;
    std::uint64_t seed = 0;
    std::int32_t folds = 5;
    std::int32_t epochs = 50;
    std::vector<double> lr_grid{5e-5, 1e-5, 5e-6};
    std::int32_t batch_size = 16;
    std::int32_t hidden = 64;
    std::int32_t layers = 3;
    double pool_ratio = 0.5;
    double tile = 0.05;
    double stride = 0.025;
    double gamma = 0.1;
    std::string target = "predicted";
    std::int32_t threads = 1;
    bool no_cache = false;
    double lo = std::numeric_limits<double>::quiet_NaN();
    double hi = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> graphs;
    std::int32_t iterations = 1000;

    std::string kind = "planted";
    std::int32_t patients = 60;
    std::int32_t signal = 0;
    std::int32_t synth_phenotypes = 6;
    std::int32_t cells_per_graph = 80;
    std::int32_t graphs_per_patient = 1;
    std::int32_t nodes = 1000;

    std::vector<std::int32_t> node_counts{8, 16, 24, 32, 1000};
    std::int32_t reps = 3;
    std::vector<std::string> methods{"naive", "masked-full", "grid"};
    std::int32_t bench_phenotypes = 17;
    std::int32_t naive_cap = 64;
    std::int32_t dense_cap = 256;
};

// ---------------------------------------------------------------------------
// Manifests and shared loading

json hash_inputs(const std::vector<fs::path>& paths) {
    json out = json::object();
    for (const auto& p : paths) {
        if (fs::exists(p)) out[p.string()] = sha256_file(p);
    }
    return out;
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const json& config,
                    const json& inputs, const std::vector<fs::path>& outputs) {
    json m;
    m["tool"] = "xcg";
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["config"] = config;
    m["inputs"] = inputs;
    json hashes = json::object();
    for (const auto& p : outputs) hashes[fs::relative(p, dir).generic_string()] = sha256_file(p);
    m["outputs"] = hashes;
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

struct LoadedData {
    Dataset dataset;
    std::string hash;
    bool cache_hit = false;
    fs::path cache_file;
    json inputs;
};

fs::path cache_dir_for(const fs::path& data) {
    if (const char* env = std::getenv("XCG_CACHE_DIR"); env != nullptr && *env != '\0') return env;
    return data / ".xcg_cache";
}

LoadedData load_data(const Options& opt) {
    require(!opt.data.empty(), "usage", "--data is required");
    require(opt.k >= 1, "usage", "--k must be at least 1");
    const auto cells_path = opt.data / "cells.csv";
    const auto patients_path = opt.data / "patients.csv";
    const auto phenotypes_path = opt.data / "phenotypes.csv";
    const bool has_names = fs::exists(phenotypes_path);

    LoadedData out;
    std::vector<fs::path> inputs{cells_path, patients_path};
    if (has_names) inputs.push_back(phenotypes_path);
    out.inputs = hash_inputs(inputs);
    std::string key = "xcg-dataset/" + std::to_string(kDatasetCacheVersion) + "/k=" + std::to_string(opt.k);
    for (const auto& [name, digest] : out.inputs.items()) key += "/" + fs::path(name).filename().string() + "=" + digest.get<std::string>();
    out.hash = sha256_hex(key);
    out.cache_file = cache_dir_for(opt.data) / (out.hash + ".bin");

    if (!opt.no_cache && load_dataset_cache(out.cache_file, out.hash, out.dataset)) {
        out.cache_hit = true;
        return out;
    }

    const auto cells = read_cells_csv(cells_path);
    const auto patients = read_patients_csv(patients_path);
    std::vector<PhenotypeName> names;
    if (has_names) names = read_phenotypes_csv(phenotypes_path);
    std::int32_t n_phenotypes = 0;
    for (const auto& c : cells) n_phenotypes = std::max(n_phenotypes, c.cell.phenotype_id + 1);
    for (const auto& p : names) {
        require(p.phenotype_id >= 0, "schema", phenotypes_path.string() + ": negative phenotype_id");
        n_phenotypes = std::max(n_phenotypes, p.phenotype_id + 1);
    }
    require(n_phenotypes > 0, "schema", cells_path.string() + ": no cells");

    out.dataset = build_dataset(cells, patients, opt.k, n_phenotypes);
    out.dataset.phenotype_names.assign(static_cast<std::size_t>(n_phenotypes), "");
    for (std::int32_t p = 0; p < n_phenotypes; ++p) out.dataset.phenotype_names[static_cast<std::size_t>(p)] = "phenotype_" + std::to_string(p);
    for (const auto& p : names) out.dataset.phenotype_names[static_cast<std::size_t>(p.phenotype_id)] = p.name;
    if (!opt.no_cache) save_dataset_cache(out.cache_file, out.dataset, out.hash);
    return out;
}

std::map<std::string, std::int32_t> bag_index(const Dataset& ds) {
    std::map<std::string, std::int32_t> out;
    for (std::size_t b = 0; b < ds.bags.size(); ++b) out[ds.bags[b].patient_id] = static_cast<std::int32_t>(b);
    return out;
}

std::vector<std::int32_t> owner_bags(const Dataset& ds) {
    std::vector<std::int32_t> owner(ds.graphs.size(), -1);
    for (std::size_t b = 0; b < ds.bags.size(); ++b) {
        for (auto g : ds.bags[b].graphs) owner[static_cast<std::size_t>(g)] = static_cast<std::int32_t>(b);
    }
    return owner;
}

std::string file_safe(const std::string& id) {
    std::string s = id;
    for (auto& ch : s) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
    }
    return s;
}

std::string model_file(std::int32_t fold, std::uint64_t seed) {
    return "fold" + std::to_string(fold) + "_seed" + std::to_string(seed) + ".json";
}

double mean_of(const std::vector<double>& v) {
    std::vector<double> finite;
    for (auto x : v) {
        if (std::isfinite(x)) finite.push_back(x);
    }
    if (finite.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
}

// Sample standard deviation over the finite entries; 0 for a single value.
double std_of(const std::vector<double>& v) {
    std::vector<double> finite;
    for (auto x : v) {
        if (std::isfinite(x)) finite.push_back(x);
    }
    if (finite.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (finite.size() == 1) return 0.0;
    const double m = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
    double ss = 0.0;
    for (auto x : finite) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(finite.size() - 1));
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    std::vector<CellRow> cells;
    std::vector<PatientRow> patients;
    std::int32_t n_phenotypes = opt.synth_phenotypes;
    json config = {{"kind", opt.kind}, {"seed", opt.seed}, {"phenotypes", n_phenotypes}};
    if (opt.kind == "planted") {
        PlantedCohortOptions po;
        po.n_phenotypes = n_phenotypes;
        po.cells_per_graph = opt.cells_per_graph;
        po.graphs_per_patient = opt.graphs_per_patient;
        auto cohort = synth_planted_cohort(opt.patients, opt.signal, opt.seed, po);
        cells = std::move(cohort.cells);
        patients = std::move(cohort.patients);
        config["patients"] = opt.patients;
        config["signal"] = opt.signal;
        config["cells_per_graph"] = opt.cells_per_graph;
        config["graphs_per_patient"] = opt.graphs_per_patient;
    } else {
        require(opt.kind == "disk", "usage", "--kind must be planted or disk");
        for (const auto& c : synth_generate(opt.nodes, n_phenotypes, opt.seed)) cells.push_back({"P0000", "P0000_g0", c});
        patients.push_back({"P0000", 12.0, true, StageGroup::early});
        config["nodes"] = opt.nodes;
    }
    std::vector<PhenotypeName> names;
    for (std::int32_t p = 0; p < n_phenotypes; ++p) names.push_back({p, "phenotype_" + std::to_string(p)});

    fs::create_directories(opt.out);
    write_cells_csv(opt.out / "cells.csv", cells);
    write_patients_csv(opt.out / "patients.csv", patients);
    write_phenotypes_csv(opt.out / "phenotypes.csv", names);
    write_manifest(opt.out, "synth", config, json::object(),
                   {opt.out / "cells.csv", opt.out / "patients.csv", opt.out / "phenotypes.csv"});
    out << json{{"patients", patients.size()}, {"cells", cells.size()}, {"out", opt.out.string()}}.dump() << "\n";
    return 0;
}

int cmd_ingest(const Options& opt, std::ostream& out) {
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    std::size_t n_cells = 0;
    std::size_t n_edges = 0;
    std::int32_t min_degree = std::numeric_limits<std::int32_t>::max();
    std::int32_t max_degree = 0;
    for (const auto& g : ds.graphs) {
        n_cells += g.cells.size();
        n_edges += static_cast<std::size_t>(g.adjacency.nnz()) / 2;
        for (std::int32_t i = 0; i < g.size(); ++i) {
            const auto d = static_cast<std::int32_t>(g.adjacency.row_indices(i).size());
            min_degree = std::min(min_degree, d);
            max_degree = std::max(max_degree, d);
        }
    }
    std::map<std::string, std::int32_t> classes;
    std::int32_t events = 0;
    std::int32_t late = 0;
    for (const auto& b : ds.bags) {
        ++classes[to_string(b.survival_class)];
        events += b.event ? 1 : 0;
        late += b.stage == StageGroup::late ? 1 : 0;
    }
    json report = {
        {"n_patients", ds.bags.size()},
        {"n_graphs", ds.graphs.size()},
        {"n_cells", n_cells},
        {"n_phenotypes", ds.n_phenotypes},
        {"n_events", events},
        {"n_late_stage", late},
        {"n_short", classes["short"]},
        {"n_long", classes["long"]},
        {"n_excluded", classes["excluded"]},
        {"k", ds.k},
        {"degree", {{"min", n_cells == 0 ? 0 : min_degree},
                    {"mean", n_cells == 0 ? 0.0 : 2.0 * static_cast<double>(n_edges) / static_cast<double>(n_cells)},
                    {"max", max_degree}}},
        {"cache", {{"hit", loaded.cache_hit}, {"file", opt.no_cache ? "" : loaded.cache_file.string()}, {"hash", loaded.hash}}},
    };
    out << report.dump(2) << "\n";
    if (!opt.out.empty()) {
        fs::create_directories(opt.out);
        report.erase("cache");
        write_file(opt.out / "ingest_report.json", report.dump(2) + "\n");
        write_manifest(opt.out, "ingest", {{"k", opt.k}, {"dataset_hash", loaded.hash}}, loaded.inputs,
                       {opt.out / "ingest_report.json"});
    }
    return 0;
}

TrainConfig train_config(const Options& opt) {
    TrainConfig cfg;
    cfg.lr_grid = opt.lr_grid;
    cfg.batch_size = opt.batch_size;
    cfg.epochs = opt.epochs;
    cfg.hidden = opt.hidden;
    cfg.layers = opt.layers;
    cfg.pool_ratio = opt.pool_ratio;
    cfg.fuse_stage = opt.fuse_stage;
    cfg.ensemble = opt.ensemble;
    cfg.threads = opt.threads;
    return cfg;
}

json config_json(const TrainConfig& cfg, Task task, const Options& opt) {
    return {{"task", to_string(task)},     {"k", opt.k},
            {"folds", opt.folds},          {"seed", opt.seed},
            {"ensemble", cfg.ensemble},    {"epochs", cfg.epochs},
            {"lr_grid", cfg.lr_grid},      {"batch_size", cfg.batch_size},
            {"hidden", cfg.hidden},        {"layers", cfg.layers},
            {"pool_ratio", cfg.pool_ratio}, {"eps_gin", cfg.eps_gin},
            {"fuse_stage", cfg.fuse_stage},
            {"adamw", {{"beta1", cfg.adamw.beta1}, {"beta2", cfg.adamw.beta2},
                       {"eps", cfg.adamw.eps}, {"weight_decay", cfg.adamw.weight_decay}}}};
}

int cmd_train(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    require(opt.ensemble >= 1, "usage", "--ensemble must be at least 1");
    require(!opt.lr_grid.empty(), "usage", "--lr-grid must not be empty");
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    const auto task = parse_task(opt.task);
    const auto cfg = train_config(opt);
    const auto plan = make_folds(ds.bags, task, opt.seed, opt.folds);
    const auto result = train(ds, task, cfg, plan, opt.seed);

    fs::create_directories(opt.out / "models");
    std::vector<fs::path> outputs;
    json runs = json::array();
    for (const auto& r : result.runs) {
        const auto rel = fs::path("models") / model_file(r.fold, r.seed);
        save_model(opt.out / rel, r.model);
        outputs.push_back(opt.out / rel);
        runs.push_back({{"fold", r.fold}, {"seed", r.seed}, {"best_lr", r.best_lr},
                        {"inner_scores", r.inner_scores}, {"test_metric", r.test_metric},
                        {"model", rel.generic_string()}});
    }

    const auto n_seeds = result.seeds.size();
    std::vector<PredictionRow> rows;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& test = plan.folds[f].test;
        std::vector<double> mean(test.size(), 0.0);
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto& r = result.runs[f * n_seeds + s];
            for (std::size_t i = 0; i < test.size(); ++i) {
                rows.push_back({ds.bags[static_cast<std::size_t>(test[i])].patient_id, r.fold,
                                static_cast<std::int64_t>(r.seed), r.test_risks[i]});
                mean[i] += r.test_risks[i];
            }
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            rows.push_back({ds.bags[static_cast<std::size_t>(test[i])].patient_id, static_cast<std::int32_t>(f), -1,
                            mean[i] / static_cast<double>(n_seeds)});
        }
    }
    write_predictions_csv(opt.out / "predictions.csv", rows);
    outputs.push_back(opt.out / "predictions.csv");

    const auto ids = [&](const std::vector<std::int32_t>& idx) {
        std::vector<std::string> v;
        for (auto b : idx) v.push_back(ds.bags[static_cast<std::size_t>(b)].patient_id);
        return v;
    };
    json folds = {{"task", to_string(task)}, {"n_folds", plan.n_folds}, {"seed", plan.seed},
                  {"seeds", result.seeds}, {"warnings", plan.warnings}};
    json patients = json::array();
    for (std::size_t b = 0; b < ds.bags.size(); ++b) {
        patients.push_back({{"patient_id", ds.bags[b].patient_id}, {"stratum", plan.stratum[b]}, {"fold", plan.fold_of[b]}});
    }
    folds["patients"] = patients;
    json fold_list = json::array();
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fd = plan.folds[f];
        fold_list.push_back({{"fold", f}, {"train", ids(fd.train)}, {"inner_train", ids(fd.inner_train)},
                             {"inner_val", ids(fd.inner_val)}, {"test", ids(fd.test)}});
    }
    folds["folds"] = fold_list;
    write_file(opt.out / "folds.json", folds.dump(2) + "\n");
    outputs.push_back(opt.out / "folds.json");

    json summary = {{"runs", runs}, {"ensemble_test_metric", result.ensemble_test_metric}};
    write_file(opt.out / "runs.json", summary.dump(2) + "\n");
    outputs.push_back(opt.out / "runs.json");

    auto config = config_json(cfg, task, opt);
    config["seeds"] = result.seeds;
    config["dataset_hash"] = loaded.hash;
    write_manifest(opt.out, "train", config, loaded.inputs, outputs);

    std::vector<double> metrics;
    for (const auto& r : result.runs) metrics.push_back(r.test_metric);
    out << json{{"task", to_string(task)},
                {"runs", result.runs.size()},
                {"mean_test_metric", mean_of(metrics)},
                {"mean_ensemble_test_metric", mean_of(result.ensemble_test_metric)},
                {"warnings", plan.warnings}}.dump()
        << "\n";
    return 0;
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("schema", path.string() + ": " + e.what());
    }
}

std::vector<double> stage_risks(const Dataset& ds, std::span<const std::int32_t> patients) {
    std::vector<double> out;
    for (auto b : patients) out.push_back(ds.bags[static_cast<std::size_t>(b)].stage == StageGroup::late ? 1.0 : 0.0);
    return out;
}

int cmd_eval(const Options& opt, std::ostream& out) {
    require(!opt.run.empty(), "usage", "--run is required");
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    const auto folds_json = read_json(opt.run / "folds.json");
    const auto task = parse_task(folds_json.at("task").get<std::string>());
    const auto rows = read_predictions_csv(opt.run / "predictions.csv");
    const auto index = bag_index(ds);

    // (fold, seed) -> patients and risks in file order.
    std::map<std::pair<std::int32_t, std::int64_t>, std::pair<std::vector<std::int32_t>, std::vector<double>>> groups;
    std::set<std::int64_t> seeds;
    std::set<std::int32_t> fold_ids;
    for (const auto& r : rows) {
        const auto it = index.find(r.patient_id);
        require(it != index.end(), "schema", "predictions.csv: unknown patient " + r.patient_id);
        auto& g = groups[{r.fold, r.seed}];
        g.first.push_back(it->second);
        g.second.push_back(r.risk);
        if (r.seed >= 0) seeds.insert(r.seed);
        fold_ids.insert(r.fold);
    }

    json per_fold = json::array();
    std::map<std::int64_t, std::vector<double>> by_seed;
    std::vector<double> ensemble;
    std::vector<double> baseline;
    for (auto f : fold_ids) {
        json entry = {{"fold", f}};
        std::vector<double> seed_metrics;
        json seed_json = json::object();
        std::vector<std::int32_t> test;
        for (auto s : seeds) {
            const auto it = groups.find({f, s});
            if (it == groups.end()) continue;
            const double m = evaluate_metric(task, ds, it->second.first, it->second.second);
            seed_metrics.push_back(m);
            by_seed[s].push_back(m);
            seed_json[std::to_string(s)] = m;
            test = it->second.first;
        }
        entry["per_seed"] = seed_json;
        entry["mean"] = mean_of(seed_metrics);
        entry["std"] = std_of(seed_metrics);
        if (const auto it = groups.find({f, -1}); it != groups.end()) {
            entry["ensemble"] = evaluate_metric(task, ds, it->second.first, it->second.second);
            ensemble.push_back(entry["ensemble"].get<double>());
            test = it->second.first;
        }
        const double base = evaluate_metric(task, ds, test, stage_risks(ds, test));
        entry["uicc8_baseline"] = base;
        baseline.push_back(base);
        per_fold.push_back(entry);
    }
    // Per seed: mean over folds; reported as mean and std over seeds.
    std::vector<double> seed_means;
    for (const auto& [s, v] : by_seed) seed_means.push_back(mean_of(v));

    json metrics = {
        {"task", to_string(task)},
        {"metric", task == Task::regression ? "c_index" : "auroc"},
        {"per_fold", per_fold},
        {"members", {{"mean", mean_of(seed_means)}, {"std", std_of(seed_means)}, {"n_seeds", seed_means.size()}}},
        {"ensemble", {{"mean", mean_of(ensemble)}, {"std", std_of(ensemble)}}},
        {"uicc8_baseline", {{"mean", mean_of(baseline)}, {"std", std_of(baseline)}}},
    };
    const auto dir = opt.out.empty() ? opt.run / "eval" : opt.out;
    fs::create_directories(dir);
    write_file(dir / "metrics.json", metrics.dump(2) + "\n");
    auto inputs = loaded.inputs;
    inputs.update(hash_inputs({opt.run / "predictions.csv", opt.run / "folds.json"}));
    write_manifest(dir, "eval", {{"run", opt.run.string()}, {"k", opt.k}}, inputs, {dir / "metrics.json"});
    out << metrics.dump(2) << "\n";
    return 0;
}

// Model files referenced by --model: a single JSON file, or a train output
// directory (every model under models/).
std::vector<fs::path> model_files(const fs::path& path) {
    require(fs::exists(path), "io", "model path does not exist: " + path.string());
    if (fs::is_regular_file(path)) return {path};
    const auto dir = fs::exists(path / "models") ? path / "models" : path;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    require(!files.empty(), "io", "no model files under " + dir.string());
    return files;
}

int cmd_predict(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    require(!opt.model.empty(), "usage", "--model is required");
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    const auto files = model_files(opt.model);
    std::vector<Model> models;
    for (const auto& f : files) models.push_back(load_model(f));
    for (const auto& m : models) {
        require(task_of(m) == task_of(models.front()), "precondition", "model set mixes tasks");
        const auto in_dim = std::visit([](const auto& mm) { return mm.config.in_dim; }, m);
        require(in_dim == ds.n_phenotypes, "dimension",
                "model expects " + std::to_string(in_dim) + " phenotypes, data has " + std::to_string(ds.n_phenotypes));
    }

    std::vector<PredictionRow> rows(ds.bags.size());
    parallel_for(ds.bags.size(), opt.threads, [&](std::size_t b) {
        std::vector<double> member;
        for (const auto& m : models) member.push_back(predict_risk(m, ds, ds.bags[b]));
        rows[b] = {ds.bags[b].patient_id, -1, -1, ensemble_predict(std::span<const double>(member))};
    });
    fs::create_directories(opt.out);
    write_predictions_csv(opt.out / "predictions.csv", rows);
    auto inputs = loaded.inputs;
    inputs.update(hash_inputs(files));
    write_manifest(opt.out, "predict", {{"task", to_string(task_of(models.front()))}, {"members", files.size()}, {"k", opt.k}},
                   inputs, {opt.out / "predictions.csv"});
    out << json{{"patients", rows.size()}, {"members", files.size()}}.dump() << "\n";
    return 0;
}

struct Explainer {
    std::vector<ClassificationModel> models;  // one per fold, or a single model
    std::vector<std::string> files;
    std::vector<std::int32_t> model_of_bag;
};

Explainer explainer_for(const fs::path& path, const Dataset& ds) {
    Explainer ex;
    require(fs::exists(path), "io", "model path does not exist: " + path.string());
    const auto take = [&](const fs::path& file) {
        auto m = load_model(file);
        require_explainable(m);
        auto& cm = std::get<ClassificationModel>(m);
        require(cm.config.in_dim == ds.n_phenotypes, "dimension",
                "model expects " + std::to_string(cm.config.in_dim) + " phenotypes, data has " +
                    std::to_string(ds.n_phenotypes));
        ex.models.push_back(std::move(cm));
        ex.files.push_back(file.string());
    };
    if (fs::is_regular_file(path)) {
        take(path);
        ex.model_of_bag.assign(ds.bags.size(), 0);
        return ex;
    }
    // Train directory: every patient is explained by the first-seed model of
    // the fold that held it out; patients outside all folds use fold 0.
    const auto folds = read_json(path / "folds.json");
    const auto seed = folds.at("seeds").at(0).get<std::uint64_t>();
    const auto n_folds = folds.at("n_folds").get<std::int32_t>();
    for (std::int32_t f = 0; f < n_folds; ++f) take(path / "models" / model_file(f, seed));
    std::map<std::string, std::int32_t> fold_of;
    for (const auto& p : folds.at("patients")) fold_of[p.at("patient_id").get<std::string>()] = p.at("fold").get<std::int32_t>();
    for (const auto& bag : ds.bags) {
        const auto it = fold_of.find(bag.patient_id);
        ex.model_of_bag.push_back(it == fold_of.end() || it->second < 0 ? 0 : it->second);
    }
    return ex;
}

int cmd_explain(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    require(!opt.model.empty(), "usage", "--model is required");
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    const auto ex = explainer_for(opt.model, ds);
    const auto owner = owner_bags(ds);

    LrpConfig lrp;
    lrp.gamma = opt.gamma;
    lrp.target = parse_target_class(opt.target);
    validate(lrp);
    const GridSpec spec{opt.tile, opt.stride};
    validate(spec);
    require(std::isnan(opt.lo) == std::isnan(opt.hi), "usage", "--lo and --hi must be given together");

    const std::set<std::string> only(opt.graphs.begin(), opt.graphs.end());
    fs::create_directories(opt.out);
    std::string csv;
    bool header = true;
    std::vector<fs::path> outputs;
    json graphs = json::array();
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
        const auto& graph = ds.graphs[g];
        if (!only.empty() && only.count(graph.graph_id) == 0) continue;
        const auto b = static_cast<std::size_t>(owner[g]);
        const auto& bag = ds.bags[b];
        const auto m = static_cast<std::size_t>(ex.model_of_bag[b]);
        const auto& model = ex.models[m];
        // Explain the patient logit: graphs contribute 1/K of the bag mean.
        const RowVector patient_logits = forward_classification(model, bag_view(ds, bag));
        const auto trace = prepare_lrp(model, graph, lrp, patient_logits, 1.0 / static_cast<double>(bag.graphs.size()));
        const auto map = grid_attribution(trace, spec, opt.threads);
        const Interval interval = std::isnan(opt.lo) ? default_interval(trace.target_logit) : Interval{opt.lo, opt.hi};
        append_relevance_csv(csv, map, graph, interval, header);
        header = false;
        const auto pgm = opt.out / ("graph_" + file_safe(graph.graph_id) + ".pgm");
        const Raster raster = render(map, graph, interval);
        write_file(pgm, encode_pgm(raster));
        outputs.push_back(pgm);
        graphs.push_back({{"graph_id", graph.graph_id},
                          {"patient_id", bag.patient_id},
                          {"model", ex.files[m]},
                          {"target_logit", trace.target_logit == kShortLogit ? "short" : "long"},
                          {"target_relevance", trace.target_relevance},
                          {"relevance_sum", std::accumulate(map.relevance.begin(), map.relevance.end(), 0.0)},
                          {"interval", {interval.lo, interval.hi}},
                          {"tile", opt.tile},
                          {"stride", opt.stride},
                          {"width", raster.width},
                          {"height", raster.height},
                          {"image", pgm.filename().string()}});
    }
    require(!graphs.empty(), "usage", "no graph selected for explanation");
    write_file(opt.out / "relevance.csv", csv);
    write_file(opt.out / "explain.json", json{{"graphs", graphs}}.dump(2) + "\n");
    outputs.insert(outputs.begin(), {opt.out / "relevance.csv", opt.out / "explain.json"});

    auto inputs = loaded.inputs;
    std::vector<fs::path> model_paths(ex.files.begin(), ex.files.end());
    inputs.update(hash_inputs(model_paths));
    write_manifest(opt.out, "explain",
                   {{"class", opt.target}, {"tile", opt.tile}, {"stride", opt.stride}, {"gamma", opt.gamma},
                    {"epsilon", lrp.epsilon}, {"k", opt.k}, {"graphs", opt.graphs}},
                   inputs, outputs);
    out << json{{"graphs", graphs.size()}, {"out", opt.out.string()}}.dump() << "\n";
    return 0;
}

std::vector<RelevanceMap> maps_from_records(const std::vector<RelevanceRecord>& records, const Dataset& ds) {
    std::map<std::string, std::vector<const RelevanceRecord*>> by_graph;
    for (const auto& r : records) by_graph[r.graph_id].push_back(&r);
    std::vector<RelevanceMap> maps;
    for (const auto& graph : ds.graphs) {
        const auto it = by_graph.find(graph.graph_id);
        require(it != by_graph.end(), "schema", "relevance.csv lacks graph " + graph.graph_id);
        require(it->second.size() == graph.cells.size(), "schema",
                "relevance.csv row count differs from graph " + graph.graph_id);
        RelevanceMap map;
        map.graph_id = graph.graph_id;
        for (std::size_t i = 0; i < graph.cells.size(); ++i) {
            require(it->second[i]->cell_id == graph.cells[i].cell_id, "schema",
                    "relevance.csv cell order differs from graph " + graph.graph_id);
            map.cell_ids.push_back(graph.cells[i].cell_id);
            map.relevance.push_back(it->second[i]->relevance);
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

int cmd_aggregate(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    require(!opt.relevance.empty(), "usage", "--relevance is required");
    require(opt.iterations >= 1, "usage", "--iterations must be positive");
    const auto loaded = load_data(opt);
    const auto& ds = loaded.dataset;
    const auto rel_path = fs::is_directory(opt.relevance) ? opt.relevance / "relevance.csv" : opt.relevance;
    const auto maps = maps_from_records(read_relevance_csv(rel_path), ds);
    const auto summary = cohort_summary(maps, ds, opt.iterations, opt.seed);

    std::string csv = "phenotype_id,name,group,median_relevance,p_value,stars\n";
    json top = json::object();
    for (const auto cls : {SurvivalClass::short_term, SurvivalClass::long_term}) {
        const auto ranked = ranking(summary, cls);
        if (!ranked.empty()) top[to_string(cls)] = ranked.front().phenotype_id;
        for (const auto& s : ranked) {
            const double med = cls == SurvivalClass::short_term ? *s.short_median : *s.long_median;
            csv += std::to_string(s.phenotype_id) + "," + ds.phenotype_names[static_cast<std::size_t>(s.phenotype_id)] +
                   "," + to_string(cls) + "," + format_double(med) + "," + format_double(s.p_value) + "," +
                   significance_stars(s.p_value) + "\n";
        }
    }
    fs::create_directories(opt.out);
    write_file(opt.out / "phenotype_stats.csv", csv);
    auto inputs = loaded.inputs;
    inputs.update(hash_inputs({rel_path}));
    write_manifest(opt.out, "aggregate", {{"iterations", opt.iterations}, {"seed", opt.seed}, {"k", opt.k}}, inputs,
                   {opt.out / "phenotype_stats.csv"});
    out << json{{"top_phenotype", top}}.dump() << "\n";
    return 0;
}

int cmd_benchmark(const Options& opt, std::ostream& out) {
    require(!opt.out.empty(), "usage", "--out is required");
    require(opt.reps >= 1, "usage", "--reps must be positive");
    for (const auto& m : opt.methods) {
        require(m == "naive" || m == "masked-full" || m == "grid", "usage", "unknown benchmark method '" + m + "'");
    }
    Rng rng(mix_seed(opt.seed, 0xbe));
    const auto model = init_classification({opt.bench_phenotypes, opt.hidden, opt.layers, 0.0}, rng);
    LrpConfig lrp;
    lrp.gamma = opt.gamma;
    const GridSpec spec{opt.tile, opt.stride};
    validate(spec);

    std::string csv = "method,n_nodes,mean_seconds,std_seconds,status\n";
    json table = json::array();
    for (const auto& method : opt.methods) {
        for (const auto n : opt.node_counts) {
            const auto cap = method == "naive" ? opt.naive_cap : method == "masked-full" ? opt.dense_cap : std::numeric_limits<std::int32_t>::max();
            if (n > cap) {
                csv += method + "," + std::to_string(n) + ",,,capped\n";
                table.push_back({{"method", method}, {"n_nodes", n}, {"status", "capped"}});
                continue;
            }
            const auto graph = build_knn_graph(synth_generate(n, opt.bench_phenotypes, mix_seed(opt.seed, static_cast<std::uint64_t>(n))),
                                               opt.k, opt.bench_phenotypes, "disk_" + std::to_string(n));
            std::vector<double> seconds;
            for (std::int32_t rep = 0; rep < opt.reps; ++rep) {
                const auto start = std::chrono::steady_clock::now();
                const auto trace = prepare_lrp(model, graph, lrp);
                if (method == "naive") {
                    const Vector r = naive_node_relevance(trace);
                    (void)r;
                } else if (method == "masked-full") {
                    const auto r = shifted_grid_average(
                        graph.cells, spec,
                        [&](std::span<const std::int32_t> tile) { return subgraph_relevance_dense(trace, tile); },
                        opt.threads);
                    (void)r;
                } else {
                    const auto r = grid_attribution(trace, spec, opt.threads);
                    (void)r;
                }
                seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            }
            const double mean = mean_of(seconds);
            const double sd = std_of(seconds);
            csv += method + "," + std::to_string(n) + "," + format_double(mean) + "," + format_double(sd) + ",ok\n";
            table.push_back({{"method", method}, {"n_nodes", n}, {"mean_seconds", mean}, {"std_seconds", sd}, {"status", "ok"}});
        }
    }
    fs::create_directories(opt.out);
    write_file(opt.out / "benchmark.csv", csv);
    write_manifest(opt.out, "benchmark",
                   {{"nodes", opt.node_counts}, {"reps", opt.reps}, {"methods", opt.methods}, {"seed", opt.seed},
                    {"hidden", opt.hidden}, {"layers", opt.layers}, {"phenotypes", opt.bench_phenotypes},
                    {"k", opt.k}, {"tile", opt.tile}, {"stride", opt.stride}, {"gamma", opt.gamma},
                    {"naive_cap", opt.naive_cap}, {"dense_cap", opt.dense_cap}, {"threads", opt.threads}},
                   json::object(), {opt.out / "benchmark.csv"});
    out << csv;
    return 0;
}

// ---------------------------------------------------------------------------
// Argument wiring

void add_data(CLI::App* app, Options& opt) {
    app->add_option("--data", opt.data, "Directory with cells.csv, patients.csv and optional phenotypes.csv")->required();
    app->add_option("--k", opt.k, "Neighbours per cell in the KNN graph")->check(CLI::PositiveNumber);
    app->add_flag("--no-cache", opt.no_cache, "Neither read nor write the dataset cache");
}

void add_threads(CLI::App* app, Options& opt) {
    app->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
}

void add_grid(CLI::App* app, Options& opt) {
    app->add_option("--tile", opt.tile, "Tile side in mm");
    app->add_option("--stride", opt.stride, "Grid shift stride in mm");
    app->add_option("--gamma", opt.gamma, "LRP gamma");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options opt;
    CLI::App app{"Explainable cell-graph survival models"};
    app.name("xcg");
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
    synth->add_option("--out", opt.out, "Output directory")->required();
    synth->add_option("--kind", opt.kind, "planted cohort or a single unit-disk graph")->check(CLI::IsMember({"planted", "disk"}));
    synth->add_option("--patients", opt.patients, "Planted cohort size (even)");
    synth->add_option("--signal", opt.signal, "Planted signal phenotype");
    synth->add_option("--phenotypes", opt.synth_phenotypes, "Number of phenotypes")->check(CLI::PositiveNumber);
    synth->add_option("--cells-per-graph", opt.cells_per_graph, "Cells per planted graph");
    synth->add_option("--graphs-per-patient", opt.graphs_per_patient, "Graphs per planted patient");
    synth->add_option("--nodes", opt.nodes, "Cells of the unit-disk graph");
    synth->add_option("--seed", opt.seed, "Random seed");

    auto* ingest = app.add_subcommand("ingest", "Validate inputs, build graphs and the dataset cache");
    add_data(ingest, opt);
    ingest->add_option("--out", opt.out, "Directory for ingest_report.json");

    auto* train_cmd = app.add_subcommand("train", "Nested cross-validated training");
    add_data(train_cmd, opt);
    add_threads(train_cmd, opt);
    train_cmd->add_option("--out", opt.out, "Output directory")->required();
    train_cmd->add_option("--task", opt.task, "regression or classification")->check(CLI::IsMember({"regression", "classification"}));
    train_cmd->add_flag("--fuse-stage,!--no-fuse-stage", opt.fuse_stage, "Add the stage embedding to graph embeddings");
    train_cmd->add_option("--ensemble", opt.ensemble, "Seeds per fold");
    train_cmd->add_option("--seed", opt.seed, "Base seed");
    train_cmd->add_option("--folds", opt.folds, "Outer folds");
    train_cmd->add_option("--epochs", opt.epochs, "Training epochs");
    train_cmd->add_option("--lr-grid", opt.lr_grid, "Learning rates to select from")->delimiter(',');
    train_cmd->add_option("--batch-size", opt.batch_size, "Regression batch size");
    train_cmd->add_option("--hidden", opt.hidden, "Hidden width");
    train_cmd->add_option("--layers", opt.layers, "GIN blocks (regression) or layers (classification)");
    train_cmd->add_option("--pool-ratio", opt.pool_ratio, "Top-k keep ratio");

    auto* predict = app.add_subcommand("predict", "Risk scores from a model file or train directory");
    add_data(predict, opt);
    add_threads(predict, opt);
    predict->add_option("--model", opt.model, "Model JSON or train output directory")->required();
    predict->add_option("--out", opt.out, "Output directory")->required();

    auto* explain = app.add_subcommand("explain", "Shifted-grid relevance heatmaps");
    add_data(explain, opt);
    add_threads(explain, opt);
    add_grid(explain, opt);
    explain->add_option("--model", opt.model, "Classifier JSON or classification train directory")->required();
    explain->add_option("--out", opt.out, "Output directory")->required();
    explain->add_option("--class", opt.target, "short, long or predicted")->check(CLI::IsMember({"short", "long", "predicted"}));
    explain->add_option("--graphs", opt.graphs, "Only these graph ids")->delimiter(',');
    explain->add_option("--lo", opt.lo, "Rendering interval lower bound");
    explain->add_option("--hi", opt.hi, "Rendering interval upper bound");

    auto* aggregate = app.add_subcommand("aggregate", "Phenotype relevance statistics");
    add_data(aggregate, opt);
    aggregate->add_option("--relevance", opt.relevance, "relevance.csv or an explain directory")->required();
    aggregate->add_option("--out", opt.out, "Output directory")->required();
    aggregate->add_option("--iterations", opt.iterations, "Permutation test iterations");
    aggregate->add_option("--seed", opt.seed, "Permutation seed");

    auto* eval = app.add_subcommand("eval", "Metrics of a train directory");
    add_data(eval, opt);
    eval->add_option("--run", opt.run, "Train output directory")->required();
    eval->add_option("--out", opt.out, "Output directory (default RUN/eval)");

    auto* bench = app.add_subcommand("benchmark", "Explanation runtime versus graph size");
    add_threads(bench, opt);
    add_grid(bench, opt);
    bench->add_option("--out", opt.out, "Output directory")->required();
    bench->add_option("--nodes", opt.node_counts, "Node counts")->delimiter(',');
    bench->add_option("--reps", opt.reps, "Repetitions per size");
    bench->add_option("--methods", opt.methods, "naive, masked-full, grid")->delimiter(',');
    bench->add_option("--naive-cap", opt.naive_cap, "Largest n for the naive method");
    bench->add_option("--dense-cap", opt.dense_cap, "Largest n for the masked-full method");
    bench->add_option("--hidden", opt.hidden, "Hidden width of the frozen classifier");
    bench->add_option("--layers", opt.layers, "GIN layers of the frozen classifier");
    bench->add_option("--phenotypes", opt.bench_phenotypes, "Number of phenotypes");
    bench->add_option("--k", opt.k, "Neighbours per cell");
    bench->add_option("--seed", opt.seed, "Random seed");

    std::string subcommand;
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        subcommand = app.get_subcommands().front()->get_name();
        if (subcommand == "synth") return cmd_synth(opt, out);
        if (subcommand == "ingest") return cmd_ingest(opt, out);
        if (subcommand == "train") return cmd_train(opt, out);
        if (subcommand == "predict") return cmd_predict(opt, out);
        if (subcommand == "explain") return cmd_explain(opt, out);
        if (subcommand == "aggregate") return cmd_aggregate(opt, out);
        if (subcommand == "eval") return cmd_eval(opt, out);
        return cmd_benchmark(opt, out);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    } catch (const Error& e) {
        err << json{{"error", {{"subcommand", subcommand}, {"code", e.code()}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << json{{"error", {{"subcommand", subcommand}, {"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    }
}

}  // namespace xcg::cli
