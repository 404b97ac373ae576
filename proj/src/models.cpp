#include "xcg/error.hpp"
#include "xcg/gnn.hpp"

#include <cmath>

namespace xcg {

namespace {

Dense glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
    Dense d;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    d.weight.resize(in, out);
    for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = rng.uniform(-limit, limit);
    d.bias = RowVector::Zero(out);
    return d;
}

Dense zeros_like(const Dense& d) {
    return {Matrix::Zero(d.weight.rows(), d.weight.cols()), RowVector::Zero(d.bias.size())};
}

GinLayer zeros_like(const GinLayer& g) { return {g.eps_gin, zeros_like(g.lin1), zeros_like(g.lin2)}; }

GinLayer init_gin(std::int32_t in, std::int32_t hidden, double eps_gin, Rng& rng) {
    GinLayer g;
    g.eps_gin = eps_gin;
    g.lin1 = glorot(in, hidden, rng);
    g.lin2 = glorot(hidden, hidden, rng);
    return g;
}

template <class Derived>
std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}

void push_dense(std::vector<ParamRef>& out, const std::string& name, Dense& d) {
    out.push_back({name + ".weight", span_of(d.weight)});
    out.push_back({name + ".bias", span_of(d.bias)});
}

void check_dense(const Dense& d, Eigen::Index in, Eigen::Index out, const std::string& name) {
    require(d.weight.rows() == in && d.weight.cols() == out && d.bias.size() == out, "schema",
            name + " has shape " + std::to_string(d.weight.rows()) + "x" +
                std::to_string(d.weight.cols()) + ", expected " + std::to_string(in) + "x" +
                std::to_string(out));
    require(d.weight.allFinite() && d.bias.allFinite(), "schema", name + " has non-finite values");
}

void check_cache(const void* model, std::uint64_t revision, const void* cached_model,
                 std::uint64_t cached_revision) {
    require(model == cached_model && revision == cached_revision, "stale cache",
            "backward called with a cache from a different forward pass or model revision");
}

}  // namespace

BagView bag_view(const Dataset& dataset, const PatientBag& bag) {
    BagView v;
    v.stage = bag.stage;
    for (auto g : bag.graphs) v.graphs.push_back(&dataset.graphs.at(static_cast<std::size_t>(g)));
    return v;
}

RegressionModel init_regression(const RegressionConfig& config, Rng& rng) {
    require(config.in_dim > 0 && config.hidden > 0 && config.blocks > 0, "precondition",
            "regression model dimensions must be positive");
    RegressionModel m;
    m.config = config;
    for (std::int32_t b = 0; b < config.blocks; ++b) {
        m.gin.push_back(init_gin(b == 0 ? config.in_dim : config.hidden, config.hidden,
                                 config.eps_gin, rng));
        TopKPool pool;
        pool.ratio = config.pool_ratio;
        pool.projection.resize(config.hidden);
        for (auto& v : pool.projection) v = rng.normal();
        m.pools.push_back(std::move(pool));
    }
    m.readout = glorot(2 * config.hidden, config.hidden, rng);
    m.stage_embeddings.resize(2, config.hidden);
    for (Eigen::Index i = 0; i < m.stage_embeddings.size(); ++i) {
        m.stage_embeddings.data()[i] = 0.1 * rng.normal();
    }
    const Dense v = glorot(config.hidden, config.hidden, rng);
    m.mil.v = v.weight;
    m.mil.w = glorot(config.hidden, 1, rng).weight.col(0);
    m.head_hidden = glorot(config.hidden, config.hidden, rng);
    m.head_out = glorot(config.hidden, 1, rng);
    return m;
}

ClassificationModel init_classification(const ClassificationConfig& config, Rng& rng) {
    require(config.in_dim > 0 && config.hidden > 0 && config.layers > 0, "precondition",
            "classification model dimensions must be positive");
    ClassificationModel m;
    m.config = config;
    for (std::int32_t l = 0; l < config.layers; ++l) {
        m.gin.push_back(init_gin(l == 0 ? config.in_dim : config.hidden, config.hidden,
                                 config.eps_gin, rng));
    }
    m.readout = glorot(config.hidden, 2, rng);
    return m;
}

RegressionModel zeros_like(const RegressionModel& model) {
    RegressionModel z;
    z.config = model.config;
    for (const auto& g : model.gin) z.gin.push_back(zeros_like(g));
    for (const auto& p : model.pools) z.pools.push_back({RowVector::Zero(p.projection.size()), p.ratio});
    z.readout = zeros_like(model.readout);
    z.stage_embeddings = Matrix::Zero(model.stage_embeddings.rows(), model.stage_embeddings.cols());
    z.mil = {Matrix::Zero(model.mil.v.rows(), model.mil.v.cols()), Vector::Zero(model.mil.w.size())};
    z.head_hidden = zeros_like(model.head_hidden);
    z.head_out = zeros_like(model.head_out);
    return z;
}

ClassificationModel zeros_like(const ClassificationModel& model) {
    ClassificationModel z;
    z.config = model.config;
    for (const auto& g : model.gin) z.gin.push_back(zeros_like(g));
    z.readout = zeros_like(model.readout);
    return z;
}

std::vector<ParamRef> parameters(RegressionModel& m) {
    std::vector<ParamRef> out;
    for (std::size_t b = 0; b < m.gin.size(); ++b) {
        const auto prefix = "gin." + std::to_string(b);
        push_dense(out, prefix + ".lin1", m.gin[b].lin1);
        push_dense(out, prefix + ".lin2", m.gin[b].lin2);
        out.push_back({"pool." + std::to_string(b) + ".projection", span_of(m.pools[b].projection)});
    }
    push_dense(out, "readout", m.readout);
    out.push_back({"stage_embeddings", span_of(m.stage_embeddings)});
    out.push_back({"mil.v", span_of(m.mil.v)});
    out.push_back({"mil.w", span_of(m.mil.w)});
    push_dense(out, "head_hidden", m.head_hidden);
    push_dense(out, "head_out", m.head_out);
    return out;
}

std::vector<ParamRef> parameters(ClassificationModel& m) {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < m.gin.size(); ++l) {
        const auto prefix = "gin." + std::to_string(l);
        push_dense(out, prefix + ".lin1", m.gin[l].lin1);
        push_dense(out, prefix + ".lin2", m.gin[l].lin2);
    }
    push_dense(out, "readout", m.readout);
    return out;
}

std::size_t parameter_count(RegressionModel& model) {
    std::size_t n = 0;
    for (const auto& p : parameters(model)) n += p.values.size();
    return n;
}

void validate(const RegressionModel& m) {
    const auto& c = m.config;
    require(c.in_dim > 0 && c.hidden > 0 && c.blocks > 0, "schema", "nonpositive model dimension");
    require(c.pool_ratio > 0.0 && c.pool_ratio <= 1.0, "schema", "pool_ratio outside (0, 1]");
    require(static_cast<std::int32_t>(m.gin.size()) == c.blocks &&
                static_cast<std::int32_t>(m.pools.size()) == c.blocks,
            "schema", "block count does not match config");
    for (std::int32_t b = 0; b < c.blocks; ++b) {
        const auto in = b == 0 ? c.in_dim : c.hidden;
        check_dense(m.gin[b].lin1, in, c.hidden, "gin." + std::to_string(b) + ".lin1");
        check_dense(m.gin[b].lin2, c.hidden, c.hidden, "gin." + std::to_string(b) + ".lin2");
        require(m.pools[b].projection.size() == c.hidden && m.pools[b].projection.allFinite() &&
                    m.pools[b].projection.norm() > 0.0,
                "schema", "pool." + std::to_string(b) + ".projection invalid");
    }
    check_dense(m.readout, 2 * c.hidden, c.hidden, "readout");
    require(m.stage_embeddings.rows() == 2 && m.stage_embeddings.cols() == c.hidden &&
                m.stage_embeddings.allFinite(),
            "schema", "stage_embeddings must be 2 x hidden");
    require(m.mil.v.rows() == c.hidden && m.mil.v.cols() == c.hidden && m.mil.w.size() == c.hidden &&
                m.mil.v.allFinite() && m.mil.w.allFinite(),
            "schema", "mil shapes invalid");
    check_dense(m.head_hidden, c.hidden, c.hidden, "head_hidden");
    check_dense(m.head_out, c.hidden, 1, "head_out");
}

void validate(const ClassificationModel& m) {
    const auto& c = m.config;
    require(c.in_dim > 0 && c.hidden > 0 && c.layers > 0, "schema", "nonpositive model dimension");
    require(static_cast<std::int32_t>(m.gin.size()) == c.layers, "schema",
            "layer count does not match config");
    for (std::int32_t l = 0; l < c.layers; ++l) {
        const auto in = l == 0 ? c.in_dim : c.hidden;
        check_dense(m.gin[l].lin1, in, c.hidden, "gin." + std::to_string(l) + ".lin1");
        check_dense(m.gin[l].lin2, c.hidden, c.hidden, "gin." + std::to_string(l) + ".lin2");
    }
    check_dense(m.readout, c.hidden, 2, "readout");
}

RowVector mean_max_readout(const Matrix& x, ReadoutCache* cache) {
    const Eigen::Index d = x.cols();
    RowVector out(2 * d);
    out.head(d) = x.colwise().mean();
    if (cache) {
        cache->rows = x.rows();
        cache->argmax.assign(static_cast<std::size_t>(d), 0);
    }
    for (Eigen::Index c = 0; c < d; ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < x.rows(); ++r) {
            if (x(r, c) > x(best, c)) best = r;
        }
        out[d + c] = x(best, c);
        if (cache) cache->argmax[static_cast<std::size_t>(c)] = best;
    }
    return out;
}

namespace {

void readout_backward(const ReadoutCache& cache, const RowVector& d_out, Matrix& d_x) {
    const Eigen::Index d = d_x.cols();
    d_x.rowwise() += d_out.head(d) / static_cast<double>(cache.rows);
    for (Eigen::Index c = 0; c < d; ++c) {
        d_x(cache.argmax[static_cast<std::size_t>(c)], c) += d_out[d + c];
    }
}

void graph_embed_backward(const RegressionModel& model, const GraphEmbedCache& cache,
                          const RowVector& d_embedding, RegressionModel& grad) {
    grad.readout.weight.noalias() += cache.readout_sum.transpose() * d_embedding;
    grad.readout.bias += d_embedding;
    const RowVector d_sum = d_embedding * model.readout.weight.transpose();

    Matrix d_next;  // gradient w.r.t. the pooled output of the current block
    for (auto b = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; b >= 0; --b) {
        const auto& pool = cache.pool[b];
        Matrix d_pooled = d_next.size() ? d_next : Matrix::Zero(pool.features.rows(), pool.features.cols());
        readout_backward(cache.readout[b], d_sum, d_pooled);
        const Matrix d_gin = topk_backward(model.pools[b], cache.gin[b].output, pool, d_pooled,
                                           grad.pools[b]);
        d_next = gin_backward(model.gin[b], cache.adjacency[b], cache.gin[b], d_gin, grad.gin[b]);
    }
}

}  // namespace

RowVector graph_embed(const RegressionModel& model, const CellGraph& graph, GraphEmbedCache* cache) {
    require(graph.features.cols() == model.config.in_dim, "dimension",
            "graph has " + std::to_string(graph.features.cols()) + " features, model expects " +
                std::to_string(model.config.in_dim));
    require(graph.size() >= 1, "precondition", "graph " + graph.graph_id + " has no cells");
    GraphEmbedCache local;
    GraphEmbedCache& c = cache ? *cache : local;
    c = GraphEmbedCache{};

    Matrix x = graph.features;
    SparseMatrix adjacency = graph.adjacency;
    c.readout_sum = RowVector::Zero(2 * model.config.hidden);
    for (std::size_t b = 0; b < model.gin.size(); ++b) {
        c.gin.push_back(gin_forward(model.gin[b], adjacency, x));
        c.pool.push_back(topk_pool(model.pools[b], c.gin.back().output, adjacency));
        c.readout.emplace_back();
        c.readout_sum += mean_max_readout(c.pool.back().features, &c.readout.back());
        c.adjacency.push_back(std::move(adjacency));
        x = c.pool.back().features;
        adjacency = c.pool.back().adjacency;
    }
    c.embedding = model.readout.forward(c.readout_sum);
    return c.embedding;
}

RowVector fuse_stage(const RegressionModel& model, const RowVector& embedding, StageGroup stage) {
    if (!model.config.fuse_stage) return embedding;
    return embedding + model.stage_embeddings.row(static_cast<Eigen::Index>(stage));
}

double forward_regression(const RegressionModel& model, const BagView& bag, RegressionCache* cache) {
    require(!bag.graphs.empty(), "precondition", "bag has no graphs");
    RegressionCache local;
    RegressionCache& c = cache ? *cache : local;
    c = RegressionCache{};
    c.model = &model;
    c.revision = model.revision;
    c.graphs.resize(bag.graphs.size());

    Matrix fused(static_cast<Eigen::Index>(bag.graphs.size()), model.config.hidden);
    for (std::size_t k = 0; k < bag.graphs.size(); ++k) {
        const RowVector h = graph_embed(model, *bag.graphs[k], &c.graphs[k]);
        fused.row(static_cast<Eigen::Index>(k)) = fuse_stage(model, h, bag.stage);
    }
    c.mil = attn_mil_pool(model.mil, fused);
    c.head_pre = model.head_hidden.forward(c.mil.pooled);
    c.head_act = c.head_pre.cwiseMax(0.0);
    c.risk = model.head_out.forward(c.head_act)(0, 0);
    return c.risk;
}

void backward_regression(const RegressionModel& model, const BagView& bag,
                         const RegressionCache& cache, double d_risk, RegressionModel& grad) {
    check_cache(&model, model.revision, cache.model, cache.revision);
    require(cache.graphs.size() == bag.graphs.size(), "stale cache", "cache/bag size mismatch");

    grad.head_out.weight.col(0) += cache.head_act.transpose() * d_risk;
    grad.head_out.bias[0] += d_risk;
    const RowVector d_act = d_risk * model.head_out.weight.col(0).transpose();
    const RowVector d_pre = (cache.head_pre.array() > 0.0).select(d_act, 0.0);
    grad.head_hidden.weight.noalias() += cache.mil.pooled.transpose() * d_pre;
    grad.head_hidden.bias += d_pre;
    const RowVector d_pooled = d_pre * model.head_hidden.weight.transpose();

    const Matrix d_fused = attn_mil_backward(model.mil, cache.mil, d_pooled, grad.mil);
    for (std::size_t k = 0; k < bag.graphs.size(); ++k) {
        const RowVector d_h = d_fused.row(static_cast<Eigen::Index>(k));
        if (model.config.fuse_stage) {
            grad.stage_embeddings.row(static_cast<Eigen::Index>(bag.stage)) += d_h;
        }
        graph_embed_backward(model, cache.graphs[k], d_h, grad);
    }
}

ClassifierGraphCache classify_graph(const ClassificationModel& model, const CellGraph& graph) {
    require(graph.features.cols() == model.config.in_dim, "dimension",
            "graph has " + std::to_string(graph.features.cols()) + " features, model expects " +
                std::to_string(model.config.in_dim));
    ClassifierGraphCache c;
    const Matrix* x = &graph.features;
    for (const auto& layer : model.gin) {
        c.gin.push_back(gin_forward(layer, graph.adjacency, *x));
        x = &c.gin.back().output;
    }
    c.readout = x->colwise().sum();
    c.logits = model.readout.forward(c.readout);
    return c;
}

RowVector forward_classification(const ClassificationModel& model, const BagView& bag,
                                 ClassificationCache* cache) {
    require(!bag.graphs.empty(), "precondition", "bag has no graphs");
    ClassificationCache local;
    ClassificationCache& c = cache ? *cache : local;
    c = ClassificationCache{};
    c.model = &model;
    c.revision = model.revision;
    c.logits = RowVector::Zero(2);
    for (const auto* g : bag.graphs) {
        c.graphs.push_back(classify_graph(model, *g));
        c.logits += c.graphs.back().logits;
    }
    c.logits /= static_cast<double>(bag.graphs.size());
    return c.logits;
}

void backward_classification(const ClassificationModel& model, const BagView& bag,
                             const ClassificationCache& cache, const RowVector& d_logits,
                             ClassificationModel& grad) {
    check_cache(&model, model.revision, cache.model, cache.revision);
    require(cache.graphs.size() == bag.graphs.size(), "stale cache", "cache/bag size mismatch");
    const RowVector d_graph = d_logits / static_cast<double>(bag.graphs.size());
    for (std::size_t k = 0; k < bag.graphs.size(); ++k) {
        const auto& gc = cache.graphs[k];
        grad.readout.weight.noalias() += gc.readout.transpose() * d_graph;
        grad.readout.bias += d_graph;
        const RowVector d_sum = d_graph * model.readout.weight.transpose();
        Matrix d_h = d_sum.replicate(gc.gin.back().output.rows(), 1);
        for (auto l = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; l >= 0; --l) {
            d_h = gin_backward(model.gin[l], bag.graphs[k]->adjacency, gc.gin[l], d_h, grad.gin[l]);
        }
    }
}

double short_survival_probability(const RowVector& logits) {
    // softmax over two logits
    return 1.0 / (1.0 + std::exp(logits[kLongLogit] - logits[kShortLogit]));
}

}  // namespace xcg
