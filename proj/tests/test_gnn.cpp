#include "support.hpp"

#include "xcg/error.hpp"
#include "xcg/gnn.hpp"
#include "xcg/optim.hpp"

#include <doctest.h>

#include <numbers>

using namespace xcg;

namespace {

SparseMatrix path3() {
    return SparseMatrix::from_triplets(3, 3, {{0, 1, 1.0}, {1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}});
}

Dense dense(Eigen::Index in, Eigen::Index out, double w, double b) {
    return {Matrix::Constant(in, out, w), RowVector::Constant(out, b)};
}

// Every weight zero except the top-k projections, which must keep a norm.
template <class M>
void zero_all(M& model) {
    for (auto& p : parameters(model)) {
        if (p.name.find("pool") == std::string::npos) std::fill(p.values.begin(), p.values.end(), 0.0);
    }
}

double max_abs(const RowVector& a, const RowVector& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("GIN layer: degenerate and hand-computed cases") {
    const GinLayer zero{0.0, dense(2, 3, 0.0, 0.0), dense(3, 2, 0.0, 0.0)};
    Matrix x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    CHECK(gin_forward(zero, path3(), x).output == Matrix::Zero(3, 2));

    GinLayer id{0.0, {Matrix::Identity(2, 2), RowVector::Zero(2)}, {Matrix::Identity(2, 2), RowVector::Zero(2)}};
    Matrix one(1, 2);
    one << 1, 0;
    CHECK(gin_forward(id, SparseMatrix(1, 1), one).output == one);

    // Path 0-1-2, scalar features (1, 2, 3): aggregated (3, 6, 5),
    // hidden relu(2a - 1) = (5, 11, 9), output relu(0.5 h + 0.25).
    const GinLayer scalar{0.0, dense(1, 1, 2.0, -1.0), dense(1, 1, 0.5, 0.25)};
    Matrix s(3, 1);
    s << 1, 2, 3;
    const auto c = gin_forward(scalar, path3(), s);
    CHECK(c.aggregated(0, 0) == 3.0);
    CHECK(c.aggregated(1, 0) == 6.0);
    CHECK(c.aggregated(2, 0) == 5.0);
    CHECK(c.output(0, 0) == doctest::Approx(2.75).epsilon(1e-15));
    CHECK(c.output(1, 0) == doctest::Approx(5.75).epsilon(1e-15));
    CHECK(c.output(2, 0) == doctest::Approx(4.75).epsilon(1e-15));

    CHECK_THROWS_AS(gin_forward(scalar, path3(), Matrix::Zero(3, 2)), Error);
}

TEST_CASE("top-k pooling") {
    Matrix x(4, 1);
    x << 3, 1, 2, 0;
    const SparseMatrix a = SparseMatrix::from_triplets(4, 4, {{0, 2, 1.0}, {2, 0, 1.0}, {1, 3, 1.0}, {3, 1, 1.0}});
    const TopKPool pool{RowVector::Constant(1, 2.0), 0.5};
    const auto r = topk_pool(pool, x, a);
    CHECK(r.kept == std::vector<std::int32_t>{0, 2});
    CHECK(r.features(0, 0) == doctest::Approx(3.0 * std::tanh(3.0)));
    CHECK(r.features(1, 0) == doctest::Approx(2.0 * std::tanh(2.0)));
    CHECK(r.adjacency.coeff(0, 1) == 1.0);

    const auto tied = topk_pool(pool, Matrix::Ones(4, 1), a);
    CHECK(tied.kept == std::vector<std::int32_t>{0, 1});

    const auto all = topk_pool({RowVector::Constant(1, 1.0), 1.0}, x, a);
    CHECK(all.kept.size() == 4);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(all.features(i, 0) == doctest::Approx(x(i, 0) * std::tanh(x(i, 0))));
    CHECK(topk_count(0.5, 5) == 3);
    CHECK(topk_count(0.5, 1) == 1);
}

TEST_CASE("attention MIL pooling") {
    Rng rng(7);
    AttnMil mil{Matrix(3, 3), Vector(3)};
    testing::randomize(mil.v, rng, 1.0);
    for (int i = 0; i < 3; ++i) mil.w[i] = rng.normal();

    Matrix one(1, 3);
    one << 0.3, -0.2, 0.9;
    const auto single = attn_mil_pool(mil, one);
    CHECK(single.weights[0] == 1.0);
    CHECK(max_abs(single.pooled, one.row(0)) == 0.0);

    const Matrix same = Matrix::Ones(4, 3);
    const auto eq = attn_mil_pool(mil, same);
    for (int k = 0; k < 4; ++k) CHECK(eq.weights[k] == doctest::Approx(0.25).epsilon(1e-15));

    Matrix two(2, 3);
    two << 0.5, 1.0, -1.0, -0.3, 0.2, 0.8;
    double score[2];
    for (int k = 0; k < 2; ++k) {
        score[k] = 0.0;
        for (int j = 0; j < 3; ++j) {
            double u = 0.0;
            for (int i = 0; i < 3; ++i) u += two(k, i) * mil.v(i, j);
            score[k] += mil.w[j] * std::tanh(u);
        }
    }
    const double a0 = 1.0 / (1.0 + std::exp(score[1] - score[0]));
    const auto res = attn_mil_pool(mil, two);
    CHECK(res.weights[0] == doctest::Approx(a0).epsilon(1e-14));
    CHECK(res.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const RowVector expect = a0 * two.row(0) + (1.0 - a0) * two.row(1);
    CHECK(max_abs(res.pooled, expect) <= 1e-14);
}

TEST_CASE("graph embedding: degenerate cases and block composition") {
    Rng rng(8);
    auto model = init_regression({4, 5, 1, 0.5, 0.0, true}, rng);
    const auto g1 = testing::random_graph(rng, 8, 4, 3);
    auto zero = model;
    zero_all(zero);
    CHECK(graph_embed(zero, g1) == RowVector::Zero(5));

    // One node: mean == max, so the readout is [h || h].
    CellGraph single;
    single.n_phenotypes = 4;
    single.cells = {{0, 0.0, 0.0, 1}};
    single.adjacency = SparseMatrix(1, 1);
    single.features = one_hot_features(single.cells, 4);
    const auto c = gin_forward(model.gin[0], single.adjacency, single.features);
    const auto p = topk_pool(model.pools[0], c.output, single.adjacency);
    RowVector both(10);
    both << p.features.row(0), p.features.row(0);
    CHECK(max_abs(graph_embed(model, single), model.readout.forward(both)) <= 1e-15);

    // Two blocks traced step by step.
    auto two = init_regression({4, 5, 2, 0.5, 0.0, true}, rng);
    Matrix x = g1.features;
    SparseMatrix a = g1.adjacency;
    RowVector sum = RowVector::Zero(10);
    for (int b = 0; b < 2; ++b) {
        const auto gc = gin_forward(two.gin[b], a, x);
        const auto pc = topk_pool(two.pools[b], gc.output, a);
        RowVector mm(10);
        mm << pc.features.colwise().mean(), pc.features.colwise().maxCoeff();
        sum += mm;
        x = pc.features;
        a = pc.adjacency;
    }
    CHECK(max_abs(graph_embed(two, g1), two.readout.forward(sum)) <= 1e-13);
}

TEST_CASE("stage fusion") {
    Rng rng(9);
    auto model = init_regression({4, 5, 2, 0.5, 0.0, true}, rng);
    RowVector h(5);
    h << 1, 2, 3, 4, 5;
    CHECK(max_abs(fuse_stage(model, h, StageGroup::late), h + model.stage_embeddings.row(1)) == 0.0);
    model.stage_embeddings.setZero();
    CHECK(fuse_stage(model, h, StageGroup::late) == h);
    testing::randomize(model.stage_embeddings, rng, 1.0);
    model.config.fuse_stage = false;
    CHECK(fuse_stage(model, h, StageGroup::early) == h);
}

TEST_CASE("regression forward") {
    Rng rng(10);
    auto cohort = testing::toy_cohort(rng, 3, 4, 14);
    auto model = init_regression({4, 6, 3, 0.5, 0.0, true}, rng);
    auto zero = model;
    zero_all(zero);
    zero.head_out.bias[0] = 0.7;
    CHECK(forward_regression(zero, bag_view(cohort.dataset, cohort.dataset.bags[0])) == 0.7);

    // A bag of several graphs, in two orders.
    PatientBag bag = cohort.dataset.bags[0];
    bag.graphs = {0, 1, 2, 3};
    BagView forward = bag_view(cohort.dataset, bag);
    std::reverse(bag.graphs.begin(), bag.graphs.end());
    BagView backward = bag_view(cohort.dataset, bag);
    CHECK(std::abs(forward_regression(model, forward) - forward_regression(model, backward)) <= 1e-12);

    // Hand composition of embed -> fuse -> MIL -> head.
    Matrix h(4, 6);
    for (int k = 0; k < 4; ++k) h.row(k) = fuse_stage(model, graph_embed(model, *forward.graphs[k]), forward.stage);
    const auto mil = attn_mil_pool(model.mil, h);
    const RowVector hidden = model.head_hidden.forward(mil.pooled).cwiseMax(0.0);
    const double risk = model.head_out.forward(hidden)(0, 0);
    RegressionCache cache;
    CHECK(std::abs(forward_regression(model, forward, &cache) - risk) <= 1e-13);
    CHECK(cache.risk == forward_regression(model, forward));
}

TEST_CASE("classification forward") {
    Rng rng(11);
    auto cohort = testing::toy_cohort(rng, 2, 4, 14);
    auto model = init_classification({4, 6, 3, 0.0}, rng);
    const auto& ds = cohort.dataset;

    PatientBag same = ds.bags[0];
    same.graphs = {0, 0, 0};
    const RowVector single = classify_graph(model, ds.graphs[0]).logits;
    CHECK(max_abs(forward_classification(model, bag_view(ds, same)), single) <= 1e-12);

    PatientBag pair = ds.bags[0];
    pair.graphs = {0, 1};
    const RowVector mean = 0.5 * (single + classify_graph(model, ds.graphs[1]).logits);
    CHECK(max_abs(forward_classification(model, bag_view(ds, pair)), mean) <= 1e-12);

    auto zero = model;
    zero_all(zero);
    zero.readout.bias << 0.3, -0.4;
    CHECK(forward_classification(zero, bag_view(ds, pair)) == zero.readout.bias);
}

TEST_CASE("regression gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(100 + seed);
        auto cohort = testing::toy_cohort(rng, 5, 4, 20);
        auto model = init_regression({4, 6, 3, 0.5, 0.0, true}, rng);
        testing::randomize(model.head_hidden.bias, rng, 0.1);
        auto grad = testing::toy_cox_grad(model, cohort);
        const auto check = testing::finite_difference_check<RegressionModel>(
            model, [&](const RegressionModel& m) { return testing::toy_cox(m, cohort); }, parameters(grad), 1e-4, 1e-5);
        INFO(check.worst);
        CHECK(check.max_rel_error < 1e-4);
        CHECK(check.kinks * 20 <= check.checked);
    }
}

TEST_CASE("classification gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(200 + seed);
        auto cohort = testing::toy_cohort(rng, 4, 4, 20);
        auto model = testing::random_classifier(rng, 4, 6, 3, false);
        auto grad = testing::toy_ce_grad(model, cohort);
        const auto check = testing::finite_difference_check<ClassificationModel>(
            model, [&](const ClassificationModel& m) { return testing::toy_ce(m, cohort); }, parameters(grad), 1e-4, 1e-5);
        INFO(check.worst);
        CHECK(check.max_rel_error < 1e-4);
        CHECK(check.kinks * 20 <= check.checked);
    }
}

TEST_CASE("gradient structure") {
    Rng rng(12);
    auto cohort = testing::toy_cohort(rng, 4, 4, 12);
    auto model = init_regression({4, 6, 2, 0.5, 0.0, false}, rng);
    auto grad = testing::toy_cox_grad(model, cohort);
    CHECK(grad.stage_embeddings == Matrix::Zero(2, 6));

    auto doubled = testing::toy_cox_grad(model, cohort, 2.0);
    const auto g1 = parameters(grad);
    const auto g2 = parameters(doubled);
    for (std::size_t p = 0; p < g1.size(); ++p) {
        for (std::size_t i = 0; i < g1[p].values.size(); ++i) CHECK(g2[p].values[i] == 2.0 * g1[p].values[i]);
    }
}

TEST_CASE("stale caches are rejected") {
    Rng rng(13);
    auto cohort = testing::toy_cohort(rng, 1, 4, 12);
    auto model = init_regression({4, 6, 2, 0.5, 0.0, true}, rng);
    const auto view = bag_view(cohort.dataset, cohort.dataset.bags[0]);
    RegressionCache cache;
    forward_regression(model, view, &cache);
    auto grad = zeros_like(model);
    CHECK_NOTHROW(backward_regression(model, view, cache, 1.0, grad));
    ++model.revision;
    CHECK_THROWS_AS(backward_regression(model, view, cache, 1.0, grad), Error);

    auto cls = init_classification({4, 6, 3, 0.0}, rng);
    ClassificationCache cc;
    forward_classification(cls, view, &cc);
    auto other = cls;
    auto cgrad = zeros_like(cls);
    CHECK_THROWS_AS(backward_classification(other, view, cc, RowVector::Ones(2), cgrad), Error);
}

TEST_CASE("AdamW and cosine schedule") {
    CHECK(cosine_lr(0.1, 0, 100) == 0.1);
    CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0).epsilon(1e-18));
    CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));

    std::vector<double> theta{1.0, -2.0};
    std::vector<double> g{0.5, 0.0};
    const std::vector<ParamRef> p{{"theta", theta}};
    const std::vector<ParamRef> gr{{"g", g}};
    auto state = make_adamw_state(p);
    AdamWConfig cfg;
    adamw_step(p, gr, state, cfg, 0.1);
    // m = 0.05, v = 2.5e-4, bias corrected to 0.5 and 0.25.
    const double expect = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(theta[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(theta[1] == doctest::Approx(-2.0 * (1.0 - 0.001)).epsilon(1e-15));

    std::vector<double> fixed{0.3, 0.4};
    std::vector<double> zero{0.0, 0.0};
    const std::vector<ParamRef> pf{{"x", fixed}};
    const std::vector<ParamRef> gz{{"g", zero}};
    auto s2 = make_adamw_state(pf);
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) adamw_step(pf, gz, s2, cfg, 0.1);
    CHECK(fixed == std::vector<double>{0.3, 0.4});
}
