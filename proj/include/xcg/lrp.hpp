#pragma once

#include "xcg/gnn.hpp"
#include "xcg/training.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace xcg {

enum class TargetClass { short_term, long_term, predicted };

std::string to_string(TargetClass target);
TargetClass parse_target_class(const std::string& text);

/// Relevance propagation settings. Linear layers use the gamma rule
/// rho(w) = w + gamma * max(0, w) with denominator stabilizer
/// epsilon * sign(z), sign(0) = +1. Bias terms receive no relevance.
///
/// Relevance is reported for the target class: positive values are
/// evidence the model uses for that class, negative values evidence
/// against it.
struct LrpConfig {
    double gamma = 0.1;
    double epsilon = 1e-9;
    TargetClass target = TargetClass::predicted;
};

void validate(const LrpConfig& config);

/// R_in[n,i] = sum_j a[n,i] rho(w_ij) / stab(z[n,j]) * R_out[n,j] with
/// z[n,j] = sum_i a[n,i] rho(w_ij); rows are independent samples.
Matrix lrp_linear(const Matrix& activations_in, const Matrix& weight, const Matrix& relevance_out,
                  double gamma, double epsilon);

/// Forward activations of one graph plus the relevance already propagated
/// through the readout onto the last GIN layer output. Holds references to
/// the model and graph, which must outlive it.
struct LrpTrace {
    const ClassificationModel* model = nullptr;
    const CellGraph* graph = nullptr;
    LrpConfig config;
    ClassifierGraphCache forward;
    int target_logit = kShortLogit;
    double target_relevance = 0.0;  // relevance injected at the target logit
    Matrix top_relevance;           // n x hidden
};

/// `patient_logits` resolves TargetClass::predicted (empty: use the graph's
/// own logits). `scale` multiplies the injected logit, e.g. 1/K to explain a
/// patient logit averaged over K graphs.
LrpTrace prepare_lrp(const ClassificationModel& model, const CellGraph& graph,
                     const LrpConfig& config, const RowVector& patient_logits = {},
                     double scale = 1.0);

/// Throws unless the model is the pooling-free classifier.
void require_explainable(const Model& model);

/// Per-node relevance at the input layer, using sparse aggregation.
Vector node_relevance(const LrpTrace& trace);

/// Same backward pass with dense adjacency arithmetic.
Vector node_relevance_dense(const LrpTrace& trace);

/// Relevance of all walks that stay inside `nodes` (any order, duplicates
/// ignored), by one backward pass over the masked adjacency. Aggregation
/// denominators come from the unmasked forward pass. Empty set gives 0.
double subgraph_relevance(const LrpTrace& trace, std::span<const std::int32_t> nodes);

/// Same quantity by dense backward passes over the full graph, with the
/// relevance rows and the adjacency masked to `nodes` at every layer.
double subgraph_relevance_dense(const LrpTrace& trace, std::span<const std::int32_t> nodes);

/// Relevance of one walk (w_0 .. w_L), w_L at the last layer, by the full
/// dense backward pass with every layer masked to the walk's node.
double walk_relevance_oracle(const LrpTrace& trace, std::span<const std::int32_t> walk);

/// Calls visit(walk) for every walk of `length` transitions where each
/// transition stays put or follows an edge; restricted to `allowed` nodes
/// when it is nonempty.
void for_each_walk(const SparseMatrix& adjacency, int length,
                   std::span<const std::int32_t> allowed,
                   const std::function<void(std::span<const std::int32_t>)>& visit);

/// Exhaustive walk-sum: sum of walk_relevance_oracle over walks inside `nodes`.
double walk_sum_oracle(const LrpTrace& trace, std::span<const std::int32_t> nodes);

/// Exhaustive per-node relevance: for each start node w_0, the sum of its
/// walks' relevance.
Vector naive_node_relevance(const LrpTrace& trace);

}  // namespace xcg
