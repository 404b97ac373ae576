#include "xcg/lrp.hpp"

#include "xcg/error.hpp"

#include <algorithm>
#include <cmath>

namespace xcg {

std::string to_string(TargetClass target) {
    switch (target) {
        case TargetClass::short_term: return "short";
        case TargetClass::long_term: return "long";
        case TargetClass::predicted: return "predicted";
    }
    return "predicted";
}

TargetClass parse_target_class(const std::string& text) {
    if (text == "short") return TargetClass::short_term;
    if (text == "long") return TargetClass::long_term;
    if (text == "predicted") return TargetClass::predicted;
    throw Error("usage", "class must be short, long or predicted, got '" + text + "'");
}

void validate(const LrpConfig& config) {
    require(std::isfinite(config.gamma) && config.gamma >= 0.0, "precondition",
            "LRP gamma must be finite and nonnegative");
    require(std::isfinite(config.epsilon) && config.epsilon >= 0.0, "precondition",
            "LRP epsilon must be finite and nonnegative");
}

namespace {

// num / (z + eps * sign(z)), sign(0) = +1; a zero denominator passes nothing.
Matrix divide_stabilized(const Matrix& num, const Matrix& z, double eps) {
    Matrix out(num.rows(), num.cols());
    for (Eigen::Index i = 0; i < num.size(); ++i) {
        const double zi = z.data()[i];
        const double d = zi + (zi >= 0.0 ? eps : -eps);
        out.data()[i] = d == 0.0 ? 0.0 : num.data()[i] / d;
    }
    return out;
}

Matrix gamma_weights(const Matrix& w, double gamma) {
    return w + gamma * w.cwiseMax(0.0);
}

Matrix gather_rows(const Matrix& m, std::span<const std::int32_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

// Relevance through one GIN layer's MLP onto its aggregated input.
Matrix mlp_relevance(const GinLayer& layer, const Matrix& hidden, const Matrix& aggregated,
                     const Matrix& relevance, const LrpConfig& cfg) {
    const Matrix r_hidden = lrp_linear(hidden, layer.lin2.weight, relevance, cfg.gamma, cfg.epsilon);
    return lrp_linear(aggregated, layer.lin1.weight, r_hidden, cfg.gamma, cfg.epsilon);
}

// Splits aggregated relevance onto the self term and each neighbour,
// proportionally per feature: R_in = H .* (M^T (R_agg ./ stab(agg))).
Matrix aggregation_relevance_sparse(double eps_gin, const SparseMatrix& adjacency_t,
                                    const Matrix& input, const Matrix& aggregated,
                                    const Matrix& relevance, double epsilon) {
    const Matrix q = divide_stabilized(relevance, aggregated, epsilon);
    return input.cwiseProduct((1.0 + eps_gin) * q + spmm(adjacency_t, q));
}

Matrix aggregation_relevance_dense(double eps_gin, const Matrix& adjacency, const Matrix& input,
                                   const Matrix& aggregated, const Matrix& relevance,
                                   double epsilon) {
    const Matrix q = divide_stabilized(relevance, aggregated, epsilon);
    const Matrix m = (1.0 + eps_gin) * Matrix::Identity(adjacency.rows(), adjacency.cols()) + adjacency;
    return input.cwiseProduct(m.transpose() * q);
}

void keep_only_row(Matrix& r, std::int32_t row) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
        if (i != row) r.row(i).setZero();
    }
}

std::vector<std::int32_t> normalized_set(std::span<const std::int32_t> nodes, std::int32_t n) {
    std::vector<std::int32_t> s(nodes.begin(), nodes.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    require(s.empty() || (s.front() >= 0 && s.back() < n), "precondition",
            "subgraph node index out of range");
    return s;
}

}  // namespace

Matrix lrp_linear(const Matrix& activations_in, const Matrix& weight, const Matrix& relevance_out,
                  double gamma, double epsilon) {
    require(activations_in.cols() == weight.rows() && relevance_out.cols() == weight.cols() &&
                activations_in.rows() == relevance_out.rows(),
            "dimension", "lrp_linear shape mismatch");
    const Matrix rho = gamma_weights(weight, gamma);
    const Matrix z = activations_in * rho;
    const Matrix q = divide_stabilized(relevance_out, z, epsilon);
    return activations_in.cwiseProduct(q * rho.transpose());
}

LrpTrace prepare_lrp(const ClassificationModel& model, const CellGraph& graph,
                     const LrpConfig& config, const RowVector& patient_logits, double scale) {
    validate(config);
    LrpTrace t;
    t.model = &model;
    t.graph = &graph;
    t.config = config;
    t.forward = classify_graph(model, graph);

    const RowVector& decision = patient_logits.size() == 2 ? patient_logits : t.forward.logits;
    switch (config.target) {
        case TargetClass::short_term: t.target_logit = kShortLogit; break;
        case TargetClass::long_term: t.target_logit = kLongLogit; break;
        case TargetClass::predicted:
            t.target_logit = decision[kShortLogit] >= decision[kLongLogit] ? kShortLogit : kLongLogit;
            break;
    }
    t.target_relevance = scale * t.forward.logits[t.target_logit];

    // Readout affine map, then the node sum.
    const Matrix s = t.forward.readout;
    const Matrix w = model.readout.weight.col(t.target_logit);
    const Matrix r_logit = Matrix::Constant(1, 1, t.target_relevance);
    const Matrix r_sum = lrp_linear(s, w, r_logit, config.gamma, config.epsilon);
    const Matrix q = divide_stabilized(r_sum, s, config.epsilon);
    const Matrix& h = t.forward.gin.back().output;
    t.top_relevance = h.array().rowwise() * q.row(0).array();
    return t;
}

void require_explainable(const Model& model) {
    require(std::holds_alternative<ClassificationModel>(model), "unsupported model",
            "LRP supports the no-pooling classifier only");
}

Vector node_relevance(const LrpTrace& trace) {
    const auto& model = *trace.model;
    const SparseMatrix adjacency_t = trace.graph->adjacency.transpose();
    Matrix r = trace.top_relevance;
    for (auto l = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; l >= 0; --l) {
        const auto& c = trace.forward.gin[l];
        r = mlp_relevance(model.gin[l], c.hidden, c.aggregated, r, trace.config);
        r = aggregation_relevance_sparse(model.gin[l].eps_gin, adjacency_t, c.input, c.aggregated, r,
                                         trace.config.epsilon);
    }
    return r.rowwise().sum();
}

Vector node_relevance_dense(const LrpTrace& trace) {
    const auto& model = *trace.model;
    const Matrix adjacency = trace.graph->adjacency.to_dense();
    Matrix r = trace.top_relevance;
    for (auto l = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; l >= 0; --l) {
        const auto& c = trace.forward.gin[l];
        r = mlp_relevance(model.gin[l], c.hidden, c.aggregated, r, trace.config);
        r = aggregation_relevance_dense(model.gin[l].eps_gin, adjacency, c.input, c.aggregated, r,
                                        trace.config.epsilon);
    }
    return r.rowwise().sum();
}

double subgraph_relevance(const LrpTrace& trace, std::span<const std::int32_t> nodes) {
    const auto& model = *trace.model;
    const auto set = normalized_set(nodes, trace.graph->size());
    if (set.empty()) return 0.0;
    // Masking relevance to S at every layer is the same as working on the
    // rows of S with the adjacency restricted to S x S.
    const SparseMatrix local_t = trace.graph->adjacency.restrict_to(set).transpose();
    Matrix r = gather_rows(trace.top_relevance, set);
    for (auto l = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; l >= 0; --l) {
        const auto& c = trace.forward.gin[l];
        const Matrix aggregated = gather_rows(c.aggregated, set);
        r = mlp_relevance(model.gin[l], gather_rows(c.hidden, set), aggregated, r, trace.config);
        r = aggregation_relevance_sparse(model.gin[l].eps_gin, local_t, gather_rows(c.input, set),
                                         aggregated, r, trace.config.epsilon);
    }
    return r.sum();
}

double subgraph_relevance_dense(const LrpTrace& trace, std::span<const std::int32_t> nodes) {
    const auto& model = *trace.model;
    const auto n = trace.graph->size();
    const auto set = normalized_set(nodes, n);
    if (set.empty()) return 0.0;
    Vector mask = Vector::Zero(n);
    for (auto v : set) mask[v] = 1.0;
    const Matrix adjacency = mask.asDiagonal() * trace.graph->adjacency.to_dense() * mask.asDiagonal();
    Matrix r = mask.asDiagonal() * trace.top_relevance;
    for (auto l = static_cast<std::ptrdiff_t>(model.gin.size()) - 1; l >= 0; --l) {
        const auto& c = trace.forward.gin[l];
        r = mlp_relevance(model.gin[l], c.hidden, c.aggregated, r, trace.config);
        r = aggregation_relevance_dense(model.gin[l].eps_gin, adjacency, c.input, c.aggregated, r,
                                        trace.config.epsilon);
        r = mask.asDiagonal() * r;
    }
    return r.sum();
}

double walk_relevance_oracle(const LrpTrace& trace, std::span<const std::int32_t> walk) {
    const auto& model = *trace.model;
    const auto& adj = trace.graph->adjacency;
    const auto layers = static_cast<std::ptrdiff_t>(model.gin.size());
    require(static_cast<std::ptrdiff_t>(walk.size()) == layers + 1, "invalid walk",
            "walk must have one node per layer plus one");
    for (std::size_t i = 0; i < walk.size(); ++i) {
        require(walk[i] >= 0 && walk[i] < trace.graph->size(), "invalid walk", "walk node out of range");
        require(i == 0 || walk[i] == walk[i - 1] || adj.coeff(walk[i - 1], walk[i]) != 0.0,
                "invalid walk", "consecutive walk nodes are not adjacent");
    }

    const Matrix adjacency = adj.to_dense();
    Matrix r = trace.top_relevance;
    keep_only_row(r, walk[static_cast<std::size_t>(layers)]);
    for (auto l = layers - 1; l >= 0; --l) {
        const auto& c = trace.forward.gin[l];
        r = mlp_relevance(model.gin[l], c.hidden, c.aggregated, r, trace.config);
        r = aggregation_relevance_dense(model.gin[l].eps_gin, adjacency, c.input, c.aggregated, r,
                                        trace.config.epsilon);
        keep_only_row(r, walk[static_cast<std::size_t>(l)]);
    }
    return r.sum();
}

void for_each_walk(const SparseMatrix& adjacency, int length,
                   std::span<const std::int32_t> allowed,
                   const std::function<void(std::span<const std::int32_t>)>& visit) {
    require(length >= 0, "precondition", "walk length must be nonnegative");
    const auto n = adjacency.rows();
    std::vector<char> ok(static_cast<std::size_t>(n), allowed.empty() ? 1 : 0);
    for (auto v : allowed) {
        require(v >= 0 && v < n, "precondition", "allowed node out of range");
        ok[static_cast<std::size_t>(v)] = 1;
    }
    std::vector<std::int32_t> walk(static_cast<std::size_t>(length) + 1);

    const std::function<void(int)> extend = [&](int depth) {
        if (depth == length) {
            visit(walk);
            return;
        }
        const auto v = walk[static_cast<std::size_t>(depth)];
        walk[static_cast<std::size_t>(depth) + 1] = v;
        extend(depth + 1);
        for (auto u : adjacency.row_indices(v)) {
            if (!ok[static_cast<std::size_t>(u)]) continue;
            walk[static_cast<std::size_t>(depth) + 1] = u;
            extend(depth + 1);
        }
    };
    for (std::int32_t v = 0; v < n; ++v) {
        if (!ok[static_cast<std::size_t>(v)]) continue;
        walk[0] = v;
        extend(0);
    }
}

double walk_sum_oracle(const LrpTrace& trace, std::span<const std::int32_t> nodes) {
    const auto set = normalized_set(nodes, trace.graph->size());
    if (set.empty()) return 0.0;
    double total = 0.0;
    for_each_walk(trace.graph->adjacency, static_cast<int>(trace.model->gin.size()), set,
                  [&](std::span<const std::int32_t> walk) {
                      total += walk_relevance_oracle(trace, walk);
                  });
    return total;
}

Vector naive_node_relevance(const LrpTrace& trace) {
    Vector out = Vector::Zero(trace.graph->size());
    for_each_walk(trace.graph->adjacency, static_cast<int>(trace.model->gin.size()), {},
                  [&](std::span<const std::int32_t> walk) {
                      out[walk[0]] += walk_relevance_oracle(trace, walk);
                  });
    return out;
}

}  // namespace xcg
