#include "support.hpp"

#include "xcg/error.hpp"
#include "xcg/lrp.hpp"

#include <doctest.h>

#include <numeric>

using namespace xcg;

namespace {

std::vector<std::int32_t> random_subset(Rng& rng, std::int32_t n) {
    std::vector<std::int32_t> s;
    for (std::int32_t i = 0; i < n; ++i) {
        if (rng.uniform() < 0.5) s.push_back(i);
    }
    return s;
}

std::vector<bool> mask_of(std::int32_t n, const std::vector<std::int32_t>& nodes) {
    std::vector<bool> m(static_cast<std::size_t>(n), false);
    for (auto v : nodes) m[static_cast<std::size_t>(v)] = true;
    return m;
}

// Sum of the scalar walk oracle over walks inside `nodes`.
double oracle_subgraph(const ClassificationModel& m, const CellGraph& g, const LrpTrace& t,
                       const std::vector<std::int32_t>& nodes) {
    const auto f = testing::dense_forward(m, g);
    double total = 0.0;
    testing::enumerate_walks(g, m.gin.size(), mask_of(g.size(), nodes), [&](const std::vector<std::int32_t>& w) {
        total += testing::walk_oracle(m, g, f, w, t.target_logit, t.config.gamma, t.config.epsilon);
    });
    return total;
}

}  // namespace

TEST_CASE("gamma rule on one linear layer") {
    Matrix a(1, 3);
    a << 0.5, 2.0, 1.5;
    Matrix r(1, 3);
    r << 0.2, -0.7, 1.1;
    const Matrix same = lrp_linear(a, Matrix::Identity(3, 3), r, 0.1, 0.0);
    CHECK((same - r).cwiseAbs().maxCoeff() <= 1e-15);

    // a = (1, 2), w = [[1, -1], [1, 1]]. With gamma 0: z = (3, 1) and
    // R_in = (1/3 - 1, 2/3 + 2). With gamma 0.5: z = (4.5, 2), R_in = (-1/6, 13/6).
    Matrix a2(1, 2);
    a2 << 1.0, 2.0;
    Matrix w(2, 2);
    w << 1.0, -1.0, 1.0, 1.0;
    const Matrix ones = Matrix::Ones(1, 2);
    const Matrix g0 = lrp_linear(a2, w, ones, 0.0, 0.0);
    CHECK(g0(0, 0) == doctest::Approx(-2.0 / 3.0).epsilon(1e-15));
    CHECK(g0(0, 1) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
    const Matrix g5 = lrp_linear(a2, w, ones, 0.5, 0.0);
    CHECK(g5(0, 0) == doctest::Approx(-1.0 / 6.0).epsilon(1e-15));
    CHECK(g5(0, 1) == doctest::Approx(13.0 / 6.0).epsilon(1e-15));

    // Zero denominators pass nothing on, without NaN.
    const Matrix dead = lrp_linear(Matrix::Zero(1, 2), w, ones, 0.1, 0.0);
    CHECK(dead == Matrix::Zero(1, 2));

    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix x(4, 5);
        Matrix wr(5, 3);
        Matrix ro(4, 3);
        testing::randomize(x, rng, 1.0);
        x = x.cwiseAbs();
        testing::randomize(wr, rng, 1.0);
        testing::randomize(ro, rng, 1.0);
        const Matrix rin = lrp_linear(x, wr, ro, 0.25, 0.0);
        for (Eigen::Index n = 0; n < 4; ++n) {
            CHECK(std::abs(rin.row(n).sum() - ro.row(n).sum()) <= 1e-10 * (1.0 + ro.row(n).cwiseAbs().sum()));
            const auto expect = testing::scalar_lrp(testing::row_of(x, n), wr, testing::row_of(ro, n), 0.25, 0.0);
            for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(rin(n, i) - expect[static_cast<std::size_t>(i)]) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(lrp_linear(Matrix::Ones(1, 3), w, ones, 0.1, 0.0), Error);
}

TEST_CASE("single-node graph gets the whole logit") {
    Rng rng(32);
    const auto m = testing::random_classifier(rng, 3, 5, 3, true);
    CellGraph g;
    g.n_phenotypes = 3;
    g.cells = {{0, 0.0, 0.0, 2}};
    g.adjacency = SparseMatrix(1, 1);
    g.features = one_hot_features(g.cells, 3);
    for (auto target : {TargetClass::short_term, TargetClass::long_term}) {
        const auto t = prepare_lrp(m, g, {0.1, 0.0, target});
        const Vector r = node_relevance(t);
        CHECK(std::abs(r[0] - t.forward.logits[t.target_logit]) <= 1e-12 * (1.0 + std::abs(r[0])));
    }
}

TEST_CASE("conservation for zero-bias classifiers") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = 5 + static_cast<std::int32_t>(rng.below(150));
        const auto m = testing::random_classifier(rng, 6, 8, 3, true);
        const auto g = testing::random_graph(rng, n, 6, 3);
        const auto t = prepare_lrp(m, g, {0.1, 0.0, TargetClass::predicted});
        const double logit = t.forward.logits[t.target_logit];
        CHECK(std::abs(node_relevance(t).sum() - logit) <= 1e-9);
        std::vector<std::int32_t> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        CHECK(std::abs(subgraph_relevance(t, all) - logit) <= 1e-9);
        CHECK(subgraph_relevance(t, {}) == 0.0);
    }
}

TEST_CASE("predicted class and scaling") {
    Rng rng(34);
    const auto m = testing::random_classifier(rng, 4, 6, 3, false);
    const auto g = testing::random_graph(rng, 12, 4, 3);
    const auto own = prepare_lrp(m, g, {});
    const auto& z = own.forward.logits;
    CHECK(own.target_logit == (z[kShortLogit] >= z[kLongLogit] ? kShortLogit : kLongLogit));

    RowVector patient(2);
    patient << (own.target_logit == kShortLogit ? -1.0 : 1.0), 0.0;
    const auto by_patient = prepare_lrp(m, g, {}, patient, 0.25);
    CHECK(by_patient.target_logit != own.target_logit);
    CHECK(by_patient.target_relevance == 0.25 * z[by_patient.target_logit]);

    const auto full = prepare_lrp(m, g, {0.1, 1e-9, TargetClass::short_term});
    const auto quarter = prepare_lrp(m, g, {0.1, 1e-9, TargetClass::short_term}, {}, 0.25);
    CHECK((node_relevance(quarter) - 0.25 * node_relevance(full)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("node relevance equals the per-node walk sum") {
    Rng rng(35);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = testing::random_classifier(rng, 4, 6, 3, trial % 2 == 0);
        auto g = testing::random_edge_graph(rng, 5, 4, 0.4);
        if (trial % 3 == 0) {
            testing::randomize(g.features, rng, 1.0);
            g.features = g.features.cwiseAbs();
        }
        const auto t = prepare_lrp(m, g, {0.1, 1e-9, trial % 2 == 0 ? TargetClass::short_term : TargetClass::long_term});
        const Vector r = node_relevance(t);
        const auto f = testing::dense_forward(m, g);
        std::vector<double> per_start(5, 0.0);
        testing::enumerate_walks(g, 3, std::vector<bool>(5, true), [&](const std::vector<std::int32_t>& w) {
            per_start[static_cast<std::size_t>(w[0])] +=
                testing::walk_oracle(m, g, f, w, t.target_logit, t.config.gamma, t.config.epsilon);
        });
        for (int v = 0; v < 5; ++v) CHECK(std::abs(r[v] - per_start[static_cast<std::size_t>(v)]) <= 1e-9);
        CHECK((naive_node_relevance(t) - r).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("subgraph relevance equals the walk sum inside the subgraph") {
    Rng rng(36);
    for (int trial = 0; trial < 30; ++trial) {
        const auto n = 3 + static_cast<std::int32_t>(rng.below(6));
        const auto m = testing::random_classifier(rng, 4, 5, 3, false);
        const auto g = testing::random_edge_graph(rng, n, 4, 0.35);
        const auto t = prepare_lrp(m, g, {0.1, 1e-9, TargetClass::predicted});
        auto nodes = random_subset(rng, n);
        const double expect = oracle_subgraph(m, g, t, nodes);
        const double got = subgraph_relevance(t, nodes);
        CHECK(testing::rel_error(got, expect, 1e-12) <= 1e-9);
        CHECK(testing::rel_error(walk_sum_oracle(t, nodes), expect, 1e-12) <= 1e-9);

        // Order and duplicates do not matter.
        auto shuffled = nodes;
        std::reverse(shuffled.begin(), shuffled.end());
        if (!nodes.empty()) shuffled.push_back(nodes.front());
        CHECK(subgraph_relevance(t, shuffled) == got);
    }
}

TEST_CASE("sparse and dense passes agree") {
    Rng rng(37);
    for (int trial = 0; trial < 10; ++trial) {
        const auto n = 20 + static_cast<std::int32_t>(rng.below(60));
        const auto m = testing::random_classifier(rng, 5, 8, 3, false);
        const auto g = testing::random_graph(rng, n, 5, 3);
        const auto t = prepare_lrp(m, g, {0.1, 1e-9, TargetClass::predicted});
        CHECK((node_relevance(t) - node_relevance_dense(t)).cwiseAbs().maxCoeff() <= 1e-12);
        const auto nodes = random_subset(rng, n);
        CHECK(std::abs(subgraph_relevance(t, nodes) - subgraph_relevance_dense(t, nodes)) <= 1e-12);
    }
}

TEST_CASE("walk oracle input checks and explainability") {
    Rng rng(38);
    const auto m = testing::random_classifier(rng, 3, 4, 3, false);
    // Path 0 - 1 - 2.
    CellGraph g;
    g.n_phenotypes = 3;
    g.cells = {{0, 0.0, 0.0, 0}, {1, 1.0, 0.0, 1}, {2, 2.0, 0.0, 2}};
    g.adjacency = SparseMatrix::from_triplets(3, 3, {{0, 1, 1.0}, {1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}});
    g.features = one_hot_features(g.cells, 3);
    const auto t = prepare_lrp(m, g, {});
    const auto code = [&](std::vector<std::int32_t> walk) {
        try {
            walk_relevance_oracle(t, walk);
        } catch (const Error& e) {
            return e.code();
        }
        return std::string();
    };
    CHECK(code({0, 1, 2, 2}) == "");
    CHECK(code({0, 2, 2, 2}) == "invalid walk");
    CHECK(code({0, 1, 2}) == "invalid walk");
    CHECK(code({0, 1, 2, 3}) == "invalid walk");

    CHECK_THROWS_AS(validate(LrpConfig{-0.1, 1e-9, TargetClass::predicted}), Error);
    const Model reg = init_regression({3, 4, 1, 0.5, 0.0, true}, rng);
    try {
        require_explainable(reg);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == "unsupported model");
    }
    CHECK_NOTHROW(require_explainable(Model(m)));
}
