#pragma once

#include "xcg/cellgraph.hpp"
#include "xcg/random.hpp"
#include "xcg/sparse.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xcg {

/// Affine map y = x * weight + bias over row vectors; weight is in_dim x out_dim.
struct Dense {
    Matrix weight;
    RowVector bias;

    Eigen::Index in_dim() const { return weight.rows(); }
    Eigen::Index out_dim() const { return weight.cols(); }
    Matrix forward(const Matrix& x) const;
};

/// GIN layer: relu(lin2(relu(lin1((1 + eps_gin) * x + A * x)))).
struct GinLayer {
    double eps_gin = 0.0;
    Dense lin1;
    Dense lin2;
};

/// Activations retained by gin_forward for backprop and relevance propagation.
struct GinCache {
    Matrix input;
    Matrix aggregated;
    Matrix pre_hidden;
    Matrix hidden;
    Matrix pre_output;
    Matrix output;
};

GinCache gin_forward(const GinLayer& layer, const SparseMatrix& adjacency, const Matrix& x);

/// Accumulates parameter gradients into `grad` and returns dL/dinput.
Matrix gin_backward(const GinLayer& layer, const SparseMatrix& adjacency, const GinCache& cache,
                    const Matrix& d_output, GinLayer& grad);

/// Top-k pooling: score = x . p / |p|, keep the ceil(ratio * n) best nodes
/// (ties to the lower index), gate kept rows by tanh(score).
struct TopKPool {
    RowVector projection;
    double ratio = 0.5;
};

struct TopKResult {
    Matrix features;                    // kept rows, gated
    SparseMatrix adjacency;             // restricted to kept nodes
    std::vector<std::int32_t> kept;     // ascending input indices
    Vector scores;                      // all n input nodes
    Vector gates;                       // tanh(score) of kept nodes
};

std::int32_t topk_count(double ratio, std::int32_t n);
TopKResult topk_pool(const TopKPool& pool, const Matrix& x, const SparseMatrix& adjacency);

/// Selection is held fixed; gradients flow through gating and kept rows.
Matrix topk_backward(const TopKPool& pool, const Matrix& x, const TopKResult& result,
                     const Matrix& d_features, TopKPool& grad);

/// Attention MIL pooling: a = softmax_k(w . tanh(h_k V)), pooled = sum a_k h_k.
struct AttnMil {
    Matrix v;  // d x d
    Vector w;  // d
};

struct MilResult {
    RowVector pooled;
    Vector weights;
    Matrix embeddings;
    Matrix attention_hidden;  // tanh(H V), K x d
};

MilResult attn_mil_pool(const AttnMil& mil, const Matrix& embeddings);

/// Returns dL/dembeddings and accumulates into grad.
Matrix attn_mil_backward(const AttnMil& mil, const MilResult& result, const RowVector& d_pooled,
                         AttnMil& grad);

/// Non-owning view on one patient's graphs.
struct BagView {
    std::vector<const CellGraph*> graphs;
    StageGroup stage = StageGroup::early;
};

BagView bag_view(const Dataset& dataset, const PatientBag& bag);

struct ParamRef {
    std::string name;
    std::span<double> values;
};

struct RegressionConfig {
    std::int32_t in_dim = 17;
    std::int32_t hidden = 64;
    std::int32_t blocks = 3;
    double pool_ratio = 0.5;
    double eps_gin = 0.0;
    bool fuse_stage = true;
};

/// Hierarchical GIN/top-k encoder per graph, additive stage fusion,
/// attention MIL over the bag and a two-layer head producing a scalar risk.
struct RegressionModel {
    RegressionConfig config;
    std::vector<GinLayer> gin;
    std::vector<TopKPool> pools;
    Dense readout;             // 2*hidden -> hidden
    Matrix stage_embeddings;   // 2 x hidden, rows indexed by StageGroup
    AttnMil mil;
    Dense head_hidden;         // hidden -> hidden
    Dense head_out;            // hidden -> 1
    std::uint64_t revision = 0;
};

struct ClassificationConfig {
    std::int32_t in_dim = 17;
    std::int32_t hidden = 64;
    std::int32_t layers = 3;
    double eps_gin = 0.0;
};

/// GIN stack without pooling, sum readout over nodes, affine map to the
/// (short, long) logits. Patient logits average the per-graph logits.
struct ClassificationModel {
    ClassificationConfig config;
    std::vector<GinLayer> gin;
    Dense readout;  // hidden -> 2
    std::uint64_t revision = 0;
};

inline constexpr int kShortLogit = 0;
inline constexpr int kLongLogit = 1;

RegressionModel init_regression(const RegressionConfig& config, Rng& rng);
ClassificationModel init_classification(const ClassificationConfig& config, Rng& rng);

/// Same architecture, every parameter zero (gradient accumulators, optimizer moments).
RegressionModel zeros_like(const RegressionModel& model);
ClassificationModel zeros_like(const ClassificationModel& model);

std::vector<ParamRef> parameters(RegressionModel& model);
std::vector<ParamRef> parameters(ClassificationModel& model);
std::size_t parameter_count(RegressionModel& model);

/// Throws if block dimensions do not chain or any value is non-finite.
void validate(const RegressionModel& model);
void validate(const ClassificationModel& model);

struct ReadoutCache {
    std::vector<Eigen::Index> argmax;  // per feature column
    Eigen::Index rows = 0;
};

struct GraphEmbedCache {
    std::vector<SparseMatrix> adjacency;  // input adjacency of each block
    std::vector<GinCache> gin;
    std::vector<TopKResult> pool;
    std::vector<ReadoutCache> readout;
    RowVector readout_sum;
    RowVector embedding;
};

/// [mean || max] over rows.
RowVector mean_max_readout(const Matrix& x, ReadoutCache* cache = nullptr);

RowVector graph_embed(const RegressionModel& model, const CellGraph& graph,
                      GraphEmbedCache* cache = nullptr);

RowVector fuse_stage(const RegressionModel& model, const RowVector& embedding, StageGroup stage);

struct RegressionCache {
    const RegressionModel* model = nullptr;
    std::uint64_t revision = 0;
    std::vector<GraphEmbedCache> graphs;
    MilResult mil;
    RowVector head_pre;
    RowVector head_act;
    double risk = 0.0;
};

double forward_regression(const RegressionModel& model, const BagView& bag,
                          RegressionCache* cache = nullptr);

/// Accumulates d(loss)/d(parameters) into grad given d(loss)/d(risk).
void backward_regression(const RegressionModel& model, const BagView& bag,
                         const RegressionCache& cache, double d_risk, RegressionModel& grad);

struct ClassifierGraphCache {
    std::vector<GinCache> gin;
    RowVector readout;
    RowVector logits;
};

ClassifierGraphCache classify_graph(const ClassificationModel& model, const CellGraph& graph);

struct ClassificationCache {
    const ClassificationModel* model = nullptr;
    std::uint64_t revision = 0;
    std::vector<ClassifierGraphCache> graphs;
    RowVector logits;
};

/// Mean over the bag's graphs of per-graph (short, long) logits.
RowVector forward_classification(const ClassificationModel& model, const BagView& bag,
                                 ClassificationCache* cache = nullptr);

void backward_classification(const ClassificationModel& model, const BagView& bag,
                             const ClassificationCache& cache, const RowVector& d_logits,
                             ClassificationModel& grad);

/// Probability of short-term survival from patient logits.
double short_survival_probability(const RowVector& logits);

}  // namespace xcg
