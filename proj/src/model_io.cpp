#include "xcg/error.hpp"
#include "xcg/io.hpp"

namespace xcg {

namespace {

using nlohmann::json;

template <class M>
json params_to_json(M model) {
    json out = json::object();
    for (const auto& p : parameters(model)) out[p.name] = std::vector<double>(p.values.begin(), p.values.end());
    return out;
}

template <class M>
void params_from_json(M& model, const json& j) {
    require(j.is_object(), "schema", "model params must be an object");
    auto refs = parameters(model);
    require(j.size() == refs.size(), "schema", "model params have unexpected entries");
    for (auto& p : refs) {
        require(j.contains(p.name), "schema", "model params miss '" + p.name + "'");
        const auto values = j.at(p.name).template get<std::vector<double>>();
        require(values.size() == p.values.size(), "schema",
                "model param '" + p.name + "' has " + std::to_string(values.size()) +
                    " values, expected " + std::to_string(p.values.size()));
        std::copy(values.begin(), values.end(), p.values.begin());
    }
}

}  // namespace

json model_to_json(const Model& model) {
    json j;
    j["schema_version"] = kModelSchemaVersion;
    if (const auto* m = std::get_if<RegressionModel>(&model)) {
        const auto& c = m->config;
        j["task"] = "regression";
        j["config"] = {{"in_dim", c.in_dim},         {"hidden", c.hidden},   {"blocks", c.blocks},
                       {"pool_ratio", c.pool_ratio}, {"eps_gin", c.eps_gin}, {"fuse_stage", c.fuse_stage}};
        j["params"] = params_to_json(*m);
    } else {
        const auto& cm = std::get<ClassificationModel>(model);
        const auto& c = cm.config;
        j["task"] = "classification";
        j["config"] = {{"in_dim", c.in_dim}, {"hidden", c.hidden}, {"layers", c.layers}, {"eps_gin", c.eps_gin}};
        j["params"] = params_to_json(cm);
    }
    return j;
}

Model model_from_json(const json& j) {
    try {
        require(j.at("schema_version").get<int>() == kModelSchemaVersion, "schema",
                "unsupported model schema_version " + j.at("schema_version").dump());
        const auto task = j.at("task").get<std::string>();
        const auto& c = j.at("config");
        Rng rng(0);
        if (task == "regression") {
            RegressionConfig cfg;
            cfg.in_dim = c.at("in_dim").get<std::int32_t>();
            cfg.hidden = c.at("hidden").get<std::int32_t>();
            cfg.blocks = c.at("blocks").get<std::int32_t>();
            cfg.pool_ratio = c.at("pool_ratio").get<double>();
            cfg.eps_gin = c.at("eps_gin").get<double>();
            cfg.fuse_stage = c.at("fuse_stage").get<bool>();
            auto m = init_regression(cfg, rng);
            params_from_json(m, j.at("params"));
            validate(m);
            return m;
        }
        require(task == "classification", "schema", "unknown model task '" + task + "'");
        ClassificationConfig cfg;
        cfg.in_dim = c.at("in_dim").get<std::int32_t>();
        cfg.hidden = c.at("hidden").get<std::int32_t>();
        cfg.layers = c.at("layers").get<std::int32_t>();
        cfg.eps_gin = c.at("eps_gin").get<double>();
        auto m = init_classification(cfg, rng);
        params_from_json(m, j.at("params"));
        validate(m);
        return m;
    } catch (const json::exception& e) {
        throw Error("schema", std::string("malformed model file: ") + e.what());
    }
}

void save_model(const fs::path& path, const Model& model) {
    write_file(path, model_to_json(model).dump() + "\n");
}

Model load_model(const fs::path& path) {
    const auto text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error("schema", path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace xcg
