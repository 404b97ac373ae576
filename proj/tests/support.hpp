#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.
// The oracles are written independently of the library code they check:
// plain pair enumeration, sorting, exhaustive subsets and finite differences.

#include "xcg/cellgraph.hpp"
#include "xcg/gnn.hpp"
#include "xcg/random.hpp"
#include "xcg/survival.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace xcg::testing {

inline double rel_error(double a, double b, double floor = 0.0) {
    const double scale = std::max({std::abs(a), std::abs(b), floor});
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Random KNN graph on the unit disk.
inline CellGraph random_graph(Rng& rng, std::int32_t n, std::int32_t n_phenotypes, std::int32_t k,
                              const std::string& id = "g") {
    return build_knn_graph(synth_generate(n, n_phenotypes, rng.bits()), k, n_phenotypes, id);
}

/// Random graph with arbitrary edges (not KNN), used where KNN structure
/// would be too regular. Self loops never stored.
inline CellGraph random_edge_graph(Rng& rng, std::int32_t n, std::int32_t n_phenotypes, double p_edge) {
    std::vector<Cell> cells;
    for (std::int32_t i = 0; i < n; ++i) {
        cells.push_back({i, rng.uniform(), rng.uniform(), static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_phenotypes)))});
    }
    std::vector<Triplet> t;
    for (std::int32_t i = 0; i < n; ++i) {
        for (std::int32_t j = i + 1; j < n; ++j) {
            if (rng.uniform() < p_edge) {
                t.push_back({i, j, 1.0});
                t.push_back({j, i, 1.0});
            }
        }
    }
    CellGraph g;
    g.graph_id = "e";
    g.n_phenotypes = n_phenotypes;
    g.adjacency = SparseMatrix::from_triplets(n, n, t);
    g.features = one_hot_features(cells, n_phenotypes);
    g.cells = std::move(cells);
    return g;
}

inline void randomize(Matrix& m, Rng& rng, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
}

inline void randomize(RowVector& v, Rng& rng, double scale) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
}

/// Classifier with Glorot weights; biases random unless `zero_bias`.
inline ClassificationModel random_classifier(Rng& rng, std::int32_t in_dim, std::int32_t hidden,
                                             std::int32_t layers, bool zero_bias) {
    auto m = init_classification({in_dim, hidden, layers, 0.0}, rng);
    if (!zero_bias) {
        for (auto& l : m.gin) {
            randomize(l.lin1.bias, rng, 0.1);
            randomize(l.lin2.bias, rng, 0.1);
        }
        randomize(m.readout.bias, rng, 0.1);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Harrell's C by enumerating ordered pairs.
inline double cindex_oracle(const std::vector<double>& risk, const std::vector<double>& time,
                            const std::vector<bool>& event) {
    long long credit2 = 0;  // twice the concordance credit
    long long comparable = 0;
    for (std::size_t i = 0; i < risk.size(); ++i) {
        if (!event[i]) continue;
        for (std::size_t j = 0; j < risk.size(); ++j) {
            if (i == j) continue;
            const bool ok = time[i] < time[j] || (time[i] == time[j] && event[j]);
            if (!ok) continue;
            ++comparable;
            if (risk[i] > risk[j]) credit2 += 2;
            else if (risk[i] == risk[j]) credit2 += 1;
        }
    }
    if (comparable == 0) return std::numeric_limits<double>::quiet_NaN();
    return (static_cast<double>(credit2) / 2.0) / static_cast<double>(comparable);
}

/// Probability a positive outscores a negative, ties one half, by pairs.
inline double auroc_oracle(const std::vector<double>& score, const std::vector<bool>& label) {
    long long credit2 = 0;
    long long pos = 0;
    long long neg = 0;
    for (std::size_t i = 0; i < score.size(); ++i) (label[i] ? pos : neg) += 1;
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (!label[i]) continue;
        for (std::size_t j = 0; j < score.size(); ++j) {
            if (label[j]) continue;
            if (score[i] > score[j]) credit2 += 2;
            else if (score[i] == score[j]) credit2 += 1;
        }
    }
    return (static_cast<double>(credit2) / 2.0) / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Cox negative partial log-likelihood straight from its definition.
inline double cox_oracle(const std::vector<double>& risk, const std::vector<double>& time,
                         const std::vector<bool>& event) {
    double total = 0.0;
    int n_events = 0;
    for (std::size_t i = 0; i < risk.size(); ++i) {
        if (!event[i]) continue;
        ++n_events;
        double s = 0.0;
        for (std::size_t j = 0; j < risk.size(); ++j) {
            if (time[j] >= time[i]) s += std::exp(risk[j] - risk[i]);
        }
        total += std::log(s);
    }
    return total / n_events;
}

inline double median_oracle(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Exact permutation p-value over all relabelings of a + b, with the
/// |median difference| statistic and an observed-inclusive count.
inline double exhaustive_permutation_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> all(a);
    all.insert(all.end(), b.begin(), b.end());
    const double observed = std::abs(median_oracle(a) - median_oracle(b));
    const auto n = all.size();
    long long total = 0;
    long long extreme = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
        std::vector<double> ga;
        std::vector<double> gb;
        for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? ga : gb).push_back(all[i]);
        ++total;
        if (std::abs(median_oracle(ga) - median_oracle(gb)) >= observed - 1e-12) ++extreme;
    }
    return static_cast<double>(extreme) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // skipped: a relu, max or top-k switch lies within h
};

/// Compares `analytic` (same layout as parameters(model)) against central
/// differences of `loss` with steps h and h / 4 combined by Richardson
/// extrapolation. The relative error uses
/// max(|fd|, |analytic|, floor) as denominator. A coordinate whose central
/// differences at h and h / 4 disagree by more than `kink_tol` straddles a
/// nondifferentiable point and is counted in `kinks` instead.
template <class M>
GradCheck finite_difference_check(M& model, const std::function<double(const M&)>& loss,
                                  std::vector<ParamRef> analytic, double h, double floor,
                                  double kink_tol = 1e-4) {
    GradCheck out;
    auto params = parameters(model);
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].values.size(); ++i) {
            double& x = params[p].values[i];
            const double x0 = x;
            const auto central = [&](double step) {
                x = x0 + step;
                const double up = loss(model);
                x = x0 - step;
                const double down = loss(model);
                x = x0;
                return (up - down) / (2.0 * step);
            };
            const double coarse = central(h);
            const double fine = central(h / 4.0);
            ++out.checked;
            if (rel_error(coarse, fine, floor) > kink_tol) {
                ++out.kinks;
                continue;
            }
            const double fd = (16.0 * fine - coarse) / 15.0;  // Richardson, O(h^4)
            const double err = rel_error(fd, analytic[p].values[i], floor);
            if (err > out.max_rel_error) {
                out.max_rel_error = err;
                out.worst = params[p].name + "[" + std::to_string(i) + "] fd=" + std::to_string(fd) +
                            " analytic=" + std::to_string(analytic[p].values[i]);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Walk-relevance oracle, written with scalar loops over a dense forward pass.

struct DenseForward {
    std::vector<Matrix> input;       // per layer, n x d_in
    std::vector<Matrix> aggregated;  // (1 + eps) x + A x
    std::vector<Matrix> hidden;      // relu(lin1)
    Matrix top;                      // last layer output
    RowVector pooled;                // node sum
    RowVector logits;
};

inline DenseForward dense_forward(const ClassificationModel& m, const CellGraph& g) {
    DenseForward f;
    const Matrix a = g.adjacency.to_dense();
    Matrix x = g.features;
    for (const auto& layer : m.gin) {
        f.input.push_back(x);
        Matrix agg = (1.0 + layer.eps_gin) * x + a * x;
        Matrix h = ((agg * layer.lin1.weight).rowwise() + layer.lin1.bias).cwiseMax(0.0);
        x = ((h * layer.lin2.weight).rowwise() + layer.lin2.bias).cwiseMax(0.0);
        f.aggregated.push_back(std::move(agg));
        f.hidden.push_back(std::move(h));
    }
    f.top = x;
    f.pooled = x.colwise().sum();
    f.logits = f.pooled * m.readout.weight + m.readout.bias;
    return f;
}

inline double stab(double z, double eps) {
    return z + (z >= 0.0 ? eps : -eps);
}

inline double rho(double w, double gamma) { return w + gamma * std::max(0.0, w); }

/// One linear layer's gamma-rule redistribution for a single sample:
/// r_in[i] = sum_j a[i] rho(w_ij) / stab(z_j) r_out[j].
inline std::vector<double> scalar_lrp(const std::vector<double>& a, const Matrix& w,
                                      const std::vector<double>& r_out, double gamma, double eps) {
    std::vector<double> r_in(a.size(), 0.0);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double z = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) z += a[i] * rho(w(static_cast<Eigen::Index>(i), j), gamma);
        const double d = stab(z, eps);
        if (d == 0.0) continue;
        for (std::size_t i = 0; i < a.size(); ++i) {
            r_in[i] += a[i] * rho(w(static_cast<Eigen::Index>(i), j), gamma) / d * r_out[static_cast<std::size_t>(j)];
        }
    }
    return r_in;
}

inline std::vector<double> row_of(const Matrix& m, Eigen::Index r) {
    return {m.row(r).data(), m.row(r).data() + m.cols()};
}

/// Relevance of walk (w_0, .., w_L) for logit `target`, scaled by `scale`.
inline double walk_oracle(const ClassificationModel& m, const CellGraph& g, const DenseForward& f,
                          const std::vector<std::int32_t>& walk, int target, double gamma, double eps,
                          double scale = 1.0) {
    const auto layers = m.gin.size();
    // Readout: logit -> pooled features -> node w_L.
    std::vector<double> pooled(f.pooled.data(), f.pooled.data() + f.pooled.size());
    const Matrix w_target = m.readout.weight.col(target);
    const auto r_pooled = scalar_lrp(pooled, w_target, {scale * f.logits[target]}, gamma, eps);
    std::vector<double> r(r_pooled.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = stab(pooled[i], eps);
        r[i] = d == 0.0 ? 0.0 : f.top(walk[layers], static_cast<Eigen::Index>(i)) / d * r_pooled[i];
    }
    for (std::size_t l = layers; l-- > 0;) {
        const auto to = walk[l + 1];
        const auto from = walk[l];
        const auto r_hidden = scalar_lrp(row_of(f.hidden[l], to), m.gin[l].lin2.weight, r, gamma, eps);
        const auto r_agg = scalar_lrp(row_of(f.aggregated[l], to), m.gin[l].lin1.weight, r_hidden, gamma, eps);
        double coef = g.adjacency.coeff(to, from);
        if (to == from) coef += 1.0 + m.gin[l].eps_gin;
        std::vector<double> next(r_agg.size());
        for (std::size_t i = 0; i < r_agg.size(); ++i) {
            const double d = stab(f.aggregated[l](to, static_cast<Eigen::Index>(i)), eps);
            next[i] = d == 0.0 ? 0.0 : coef * f.input[l](from, static_cast<Eigen::Index>(i)) / d * r_agg[i];
        }
        r = std::move(next);
    }
    return std::accumulate(r.begin(), r.end(), 0.0);
}

/// Every walk of `length` steps (stay or follow an edge) inside `allowed`.
inline void enumerate_walks(const CellGraph& g, std::size_t length, const std::vector<bool>& allowed,
                            const std::function<void(const std::vector<std::int32_t>&)>& visit) {
    std::vector<std::int32_t> walk(length + 1);
    std::function<void(std::size_t)> extend = [&](std::size_t depth) {
        if (depth == length) {
            visit(walk);
            return;
        }
        for (std::int32_t u = 0; u < g.size(); ++u) {
            if (!allowed[static_cast<std::size_t>(u)]) continue;
            if (u != walk[depth] && g.adjacency.coeff(walk[depth], u) == 0.0) continue;
            walk[depth + 1] = u;
            extend(depth + 1);
        }
    };
    for (std::int32_t v = 0; v < g.size(); ++v) {
        if (!allowed[static_cast<std::size_t>(v)]) continue;
        walk[0] = v;
        extend(0);
    }
}

/// Toy regression cohort: bags of 1-3 graphs with Gaussian node features.
struct ToyCohort {
    Dataset dataset;
    std::vector<double> times;
    std::vector<bool> events;
};

inline ToyCohort toy_cohort(Rng& rng, std::int32_t n_bags, std::int32_t in_dim, std::int32_t max_nodes) {
    ToyCohort c;
    c.dataset.n_phenotypes = in_dim;
    for (std::int32_t b = 0; b < n_bags; ++b) {
        PatientBag bag;
        bag.patient_id = "T" + std::to_string(b);
        bag.stage = rng.uniform() < 0.5 ? StageGroup::early : StageGroup::late;
        bag.os_months = 1.0 + 60.0 * rng.uniform();
        bag.event = b == 0 || rng.uniform() < 0.7;
        const auto n_graphs = 1 + static_cast<std::int32_t>(rng.below(3));
        for (std::int32_t g = 0; g < n_graphs; ++g) {
            const auto n = 6 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(max_nodes - 5)));
            auto graph = random_graph(rng, n, in_dim, 3, bag.patient_id + "_" + std::to_string(g));
            randomize(graph.features, rng, 1.0);
            bag.graphs.push_back(static_cast<std::int32_t>(c.dataset.graphs.size()));
            c.dataset.graphs.push_back(std::move(graph));
            c.dataset.graph_owner.push_back(bag.patient_id);
        }
        c.times.push_back(bag.os_months);
        c.events.push_back(bag.event);
        bag.survival_class = classify_survival(bag.os_months, bag.event);
        c.dataset.bags.push_back(std::move(bag));
    }
    return c;
}

}  // namespace xcg::testing

namespace xcg::testing {

inline std::vector<bool> to_bools(std::span<const bool> v) { return {v.begin(), v.end()}; }

/// Full-batch Cox loss of the toy cohort.
inline double toy_cox(const RegressionModel& m, const ToyCohort& c) {
    std::vector<double> risks;
    for (const auto& bag : c.dataset.bags) risks.push_back(forward_regression(m, bag_view(c.dataset, bag)));
    std::unique_ptr<bool[]> ev(new bool[c.events.size()]);
    for (std::size_t i = 0; i < c.events.size(); ++i) ev[i] = c.events[i];
    return cox_loss(risks, c.times, std::span<const bool>(ev.get(), c.events.size())).value;
}

/// Analytic gradient of toy_cox, scaled by `upstream`.
inline RegressionModel toy_cox_grad(const RegressionModel& m, const ToyCohort& c, double upstream = 1.0) {
    std::vector<double> risks;
    std::vector<RegressionCache> caches(c.dataset.bags.size());
    for (std::size_t b = 0; b < c.dataset.bags.size(); ++b) {
        risks.push_back(forward_regression(m, bag_view(c.dataset, c.dataset.bags[b]), &caches[b]));
    }
    std::unique_ptr<bool[]> ev(new bool[c.events.size()]);
    for (std::size_t i = 0; i < c.events.size(); ++i) ev[i] = c.events[i];
    const auto loss = cox_loss(risks, c.times, std::span<const bool>(ev.get(), c.events.size()));
    auto grad = zeros_like(m);
    for (std::size_t b = 0; b < c.dataset.bags.size(); ++b) {
        backward_regression(m, bag_view(c.dataset, c.dataset.bags[b]), caches[b], upstream * loss.gradient[b], grad);
    }
    return grad;
}

/// Summed cross-entropy of patient logits; bag b is labelled short when b is even.
inline double toy_ce(const ClassificationModel& m, const ToyCohort& c) {
    double total = 0.0;
    for (std::size_t b = 0; b < c.dataset.bags.size(); ++b) {
        const RowVector z = forward_classification(m, bag_view(c.dataset, c.dataset.bags[b]));
        const int label = b % 2 == 0 ? kShortLogit : kLongLogit;
        const double top = z.maxCoeff();
        total += -(z[label] - top - std::log((z.array() - top).exp().sum()));
    }
    return total;
}

inline ClassificationModel toy_ce_grad(const ClassificationModel& m, const ToyCohort& c) {
    auto grad = zeros_like(m);
    for (std::size_t b = 0; b < c.dataset.bags.size(); ++b) {
        ClassificationCache cache;
        const auto view = bag_view(c.dataset, c.dataset.bags[b]);
        const RowVector z = forward_classification(m, view, &cache);
        RowVector p = (z.array() - z.maxCoeff()).exp();
        p /= p.sum();
        p[b % 2 == 0 ? kShortLogit : kLongLogit] -= 1.0;
        backward_classification(m, view, cache, p, grad);
    }
    return grad;
}

}  // namespace xcg::testing
