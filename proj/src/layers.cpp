#include "xcg/error.hpp"
#include "xcg/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xcg {

namespace {

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre, const Matrix& upstream) {
    return (pre.array() > 0.0).select(upstream, 0.0);
}

}  // namespace

Matrix Dense::forward(const Matrix& x) const {
    require(x.cols() == weight.rows(), "dimension",
            "affine input has " + std::to_string(x.cols()) + " columns, expected " +
                std::to_string(weight.rows()));
    Matrix y = x * weight;
    y.rowwise() += bias;
    return y;
}

GinCache gin_forward(const GinLayer& layer, const SparseMatrix& adjacency, const Matrix& x) {
    require(adjacency.rows() == x.rows() && adjacency.cols() == x.rows(), "dimension",
            "GIN adjacency does not match node count");
    GinCache c;
    c.input = x;
    c.aggregated = (1.0 + layer.eps_gin) * x + spmm(adjacency, x);
    c.pre_hidden = layer.lin1.forward(c.aggregated);
    c.hidden = relu(c.pre_hidden);
    c.pre_output = layer.lin2.forward(c.hidden);
    c.output = relu(c.pre_output);
    return c;
}

Matrix gin_backward(const GinLayer& layer, const SparseMatrix& adjacency, const GinCache& cache,
                    const Matrix& d_output, GinLayer& grad) {
    const Matrix d_pre_output = relu_mask(cache.pre_output, d_output);
    grad.lin2.weight.noalias() += cache.hidden.transpose() * d_pre_output;
    grad.lin2.bias += d_pre_output.colwise().sum();
    const Matrix d_hidden = d_pre_output * layer.lin2.weight.transpose();
    const Matrix d_pre_hidden = relu_mask(cache.pre_hidden, d_hidden);
    grad.lin1.weight.noalias() += cache.aggregated.transpose() * d_pre_hidden;
    grad.lin1.bias += d_pre_hidden.colwise().sum();
    const Matrix d_agg = d_pre_hidden * layer.lin1.weight.transpose();
    // Graph adjacency is symmetric, but top-k restrictions are handled generally.
    return (1.0 + layer.eps_gin) * d_agg + spmm(adjacency.transpose(), d_agg);
}

std::int32_t topk_count(double ratio, std::int32_t n) {
    require(ratio > 0.0 && ratio <= 1.0, "precondition", "top-k ratio must lie in (0, 1]");
    // The tolerance keeps products like 0.3 * 10 from rounding up to 4.
    const auto k = static_cast<std::int32_t>(std::ceil(ratio * n - 1e-9));
    return std::clamp(k, std::min<std::int32_t>(1, n), n);
}

TopKResult topk_pool(const TopKPool& pool, const Matrix& x, const SparseMatrix& adjacency) {
    const auto n = static_cast<std::int32_t>(x.rows());
    require(n >= 1, "precondition", "top-k pooling needs at least one node");
    require(pool.projection.size() == x.cols(), "dimension", "top-k projection length mismatch");
    const double norm = pool.projection.norm();
    require(norm > 0.0, "precondition", "top-k projection vector has zero norm");

    TopKResult r;
    r.scores = (x * pool.projection.transpose()) / norm;
    std::vector<std::int32_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto k = topk_count(pool.ratio, n);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](auto a, auto b) {
        return r.scores[a] != r.scores[b] ? r.scores[a] > r.scores[b] : a < b;
    });
    r.kept.assign(order.begin(), order.begin() + k);
    std::sort(r.kept.begin(), r.kept.end());

    r.features.resize(k, x.cols());
    r.gates.resize(k);
    for (std::int32_t i = 0; i < k; ++i) {
        r.gates[i] = std::tanh(r.scores[r.kept[i]]);
        r.features.row(i) = x.row(r.kept[i]) * r.gates[i];
    }
    r.adjacency = adjacency.restrict_to(r.kept);
    return r;
}

Matrix topk_backward(const TopKPool& pool, const Matrix& x, const TopKResult& result,
                     const Matrix& d_features, TopKPool& grad) {
    const double norm = pool.projection.norm();
    const RowVector unit = pool.projection / norm;
    Matrix d_x = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < result.kept.size(); ++i) {
        const auto row = result.kept[i];
        const auto ii = static_cast<Eigen::Index>(i);
        const double gate = result.gates[ii];
        const double d_gate = d_features.row(ii).dot(x.row(row));
        const double d_score = d_gate * (1.0 - gate * gate);
        d_x.row(row) += gate * d_features.row(ii) + d_score * unit;
        // d(x . p / |p|)/dp = x/|p| - (x . p) p / |p|^3
        grad.projection += d_score * (x.row(row) / norm - result.scores[row] * unit / norm);
    }
    return d_x;
}

MilResult attn_mil_pool(const AttnMil& mil, const Matrix& embeddings) {
    require(embeddings.rows() >= 1, "precondition", "MIL pooling needs a nonempty bag");
    require(mil.v.rows() == embeddings.cols() && mil.w.size() == mil.v.cols(), "dimension",
            "MIL attention shape mismatch");
    MilResult r;
    r.embeddings = embeddings;
    r.attention_hidden = (embeddings * mil.v).array().tanh().matrix();
    const Vector logits = r.attention_hidden * mil.w;
    const double top = logits.maxCoeff();
    r.weights = (logits.array() - top).exp().matrix();
    r.weights /= r.weights.sum();
    r.pooled = r.weights.transpose() * embeddings;
    return r;
}

Matrix attn_mil_backward(const AttnMil& mil, const MilResult& result, const RowVector& d_pooled,
                         AttnMil& grad) {
    const Eigen::Index k = result.embeddings.rows();
    Matrix d_emb = result.weights * d_pooled;  // a_k * dpooled
    const Vector d_weights = result.embeddings * d_pooled.transpose();
    const double mean_dw = result.weights.dot(d_weights);
    const Vector d_logits = result.weights.cwiseProduct(d_weights.array().matrix() -
                                                        Vector::Constant(k, mean_dw));
    grad.w.noalias() += result.attention_hidden.transpose() * d_logits;
    const Matrix d_hidden = d_logits * mil.w.transpose();
    const Matrix d_pre =
        (d_hidden.array() * (1.0 - result.attention_hidden.array().square())).matrix();
    grad.v.noalias() += result.embeddings.transpose() * d_pre;
    d_emb.noalias() += d_pre * mil.v.transpose();
    return d_emb;
}

}  // namespace xcg
