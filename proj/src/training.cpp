#include "xcg/training.hpp"

#include "xcg/error.hpp"
#include "xcg/parallel.hpp"
#include "xcg/random.hpp"
#include "xcg/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace xcg {

std::string to_string(Task task) {
    return task == Task::regression ? "regression" : "classification";
}

Task parse_task(const std::string& text) {
    if (text == "regression") return Task::regression;
    if (text == "classification") return Task::classification;
    throw Error("usage", "task must be 'regression' or 'classification', got '" + text + "'");
}

Task task_of(const Model& model) {
    return std::holds_alternative<RegressionModel>(model) ? Task::regression : Task::classification;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int32_t stratum_key(const PatientBag& bag, Task task) {
    if (task == Task::classification) {
        if (bag.survival_class == SurvivalClass::excluded) return -1;
        return bag.survival_class == SurvivalClass::short_term ? 0 : 1;
    }
    return (bag.event ? 0 : 2) + static_cast<std::int32_t>(bag.stage);
}

void zero(std::span<const ParamRef> params) {
    for (const auto& p : params) std::fill(p.values.begin(), p.values.end(), 0.0);
}

void check_finite(double loss, const char* what) {
    require(std::isfinite(loss), "divergence", std::string("non-finite ") + what + " during training");
}

}  // namespace

FoldPlan make_folds(std::span<const PatientBag> bags, Task task, std::uint64_t seed,
                    std::int32_t n_folds, double inner_val_fraction) {
    require(n_folds >= 2, "precondition", "need at least 2 folds");
    FoldPlan plan;
    plan.task = task;
    plan.n_folds = n_folds;
    plan.seed = seed;
    plan.stratum.assign(bags.size(), -1);
    plan.fold_of.assign(bags.size(), -1);

    std::map<std::int32_t, std::vector<std::int32_t>> strata;
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const auto key = stratum_key(bags[i], task);
        if (key >= 0) strata[key].push_back(static_cast<std::int32_t>(i));
    }
    std::size_t eligible = 0;
    for (const auto& [key, members] : strata) eligible += members.size();
    require(eligible >= static_cast<std::size_t>(2 * n_folds), "precondition",
            "cross-validation needs at least " + std::to_string(2 * n_folds) +
                " eligible patients, got " + std::to_string(eligible));

    // Strata too small to reach every fold are pooled into the first of them.
    std::int32_t pooled_key = -1;
    for (auto it = strata.begin(); it != strata.end();) {
        if (it->second.size() >= static_cast<std::size_t>(n_folds)) {
            ++it;
            continue;
        }
        plan.warnings.push_back("stratum " + std::to_string(it->first) + " has " +
                                std::to_string(it->second.size()) + " patients (< " +
                                std::to_string(n_folds) + " folds); merged");
        if (pooled_key < 0) {
            pooled_key = it->first;
            ++it;
        } else {
            auto& pool = strata[pooled_key];
            pool.insert(pool.end(), it->second.begin(), it->second.end());
            it = strata.erase(it);
        }
    }

    Rng rng(mix_seed(seed, 0x5f0d));
    std::size_t position = 0;
    for (auto& [key, members] : strata) {
        std::sort(members.begin(), members.end());
        rng.shuffle(std::span(members));
        for (auto i : members) {
            plan.stratum[i] = key;
            plan.fold_of[i] = static_cast<std::int32_t>(position++ % static_cast<std::size_t>(n_folds));
        }
    }

    plan.folds.resize(static_cast<std::size_t>(n_folds));
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const auto f = plan.fold_of[i];
        if (f < 0) continue;
        for (std::int32_t g = 0; g < n_folds; ++g) {
            (g == f ? plan.folds[g].test : plan.folds[g].train).push_back(static_cast<std::int32_t>(i));
        }
    }

    for (std::int32_t f = 0; f < n_folds; ++f) {
        auto& fold = plan.folds[f];
        std::map<std::int32_t, std::vector<std::int32_t>> by_stratum;
        for (auto i : fold.train) by_stratum[plan.stratum[i]].push_back(i);
        Rng inner_rng(mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(f)));
        for (auto& [key, members] : by_stratum) {
            inner_rng.shuffle(std::span(members));
            auto n_val = static_cast<std::size_t>(std::lround(inner_val_fraction * static_cast<double>(members.size())));
            if (members.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
            fold.inner_val.insert(fold.inner_val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
            fold.inner_train.insert(fold.inner_train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
        }
        std::sort(fold.inner_val.begin(), fold.inner_val.end());
        std::sort(fold.inner_train.begin(), fold.inner_train.end());
    }
    return plan;
}

double predict_risk(const Model& model, const Dataset& dataset, const PatientBag& bag) {
    const auto view = bag_view(dataset, bag);
    if (const auto* reg = std::get_if<RegressionModel>(&model)) return forward_regression(*reg, view);
    return short_survival_probability(
        forward_classification(std::get<ClassificationModel>(model), view));
}

double ensemble_predict(std::span<const RegressionModel> models, const BagView& bag) {
    require(!models.empty(), "precondition", "ensemble needs at least one model");
    std::vector<double> risks;
    risks.reserve(models.size());
    for (const auto& m : models) {
        require(m.config.in_dim == models.front().config.in_dim &&
                    m.config.hidden == models.front().config.hidden &&
                    m.config.blocks == models.front().config.blocks,
                "precondition", "ensemble members do not share an architecture");
        risks.push_back(forward_regression(m, bag));
    }
    return ensemble_predict(risks);
}

RegressionModel fit_regression(const Dataset& dataset, std::span<const std::int32_t> patients,
                               const TrainConfig& config, double lr, std::uint64_t seed) {
    RegressionConfig rc;
    rc.in_dim = dataset.n_phenotypes;
    rc.hidden = config.hidden;
    rc.blocks = config.layers;
    rc.pool_ratio = config.pool_ratio;
    rc.eps_gin = config.eps_gin;
    rc.fuse_stage = config.fuse_stage;
    Rng init_rng(mix_seed(seed, 1));
    RegressionModel model = init_regression(rc, init_rng);
    if (config.epochs <= 0 || patients.empty()) return model;

    RegressionModel grad = zeros_like(model);
    const auto params = parameters(model);
    const auto grads = parameters(grad);
    AdamWState state = make_adamw_state(params);

    const auto batch = static_cast<std::size_t>(std::max(config.batch_size, 1));
    const std::size_t n_batches = (patients.size() + batch - 1) / batch;
    const auto total_steps = static_cast<std::int64_t>(n_batches) * config.epochs;
    std::vector<std::int32_t> order(patients.begin(), patients.end());
    Rng shuffle_rng(mix_seed(seed, 2));
    std::vector<RegressionCache> caches(batch);
    std::vector<BagView> views(batch);
    std::vector<double> risks(batch), times(batch);
    const std::unique_ptr<bool[]> events(new bool[batch]);

    std::int64_t step = 0;
    for (std::int32_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
            const std::size_t count = std::min(batch, order.size() - start);
            bool any_event = false;
            for (std::size_t i = 0; i < count; ++i) {
                const auto& bag = dataset.bags[static_cast<std::size_t>(order[start + i])];
                views[i] = bag_view(dataset, bag);
                risks[i] = forward_regression(model, views[i], &caches[i]);
                times[i] = bag.os_months;
                events[i] = bag.event;
                any_event = any_event || bag.event;
            }
            // Batches without an event carry no ranking information.
            if (!any_event) continue;
            const auto loss = cox_loss(std::span(risks).first(count), std::span(times).first(count),
                                       std::span<const bool>(events.get(), count));
            check_finite(loss.value, "Cox loss");
            zero(grads);
            for (std::size_t i = 0; i < count; ++i) {
                backward_regression(model, views[i], caches[i], loss.gradient[i], grad);
            }
            adamw_step(params, grads, state, config.adamw, cosine_lr(lr, step, total_steps));
            ++model.revision;
        }
    }
    return model;
}

ClassificationModel fit_classification(const Dataset& dataset,
                                       std::span<const std::int32_t> patients,
                                       const TrainConfig& config, double lr, std::uint64_t seed) {
    ClassificationConfig cc;
    cc.in_dim = dataset.n_phenotypes;
    cc.hidden = config.hidden;
    cc.layers = config.layers;
    cc.eps_gin = config.eps_gin;
    Rng init_rng(mix_seed(seed, 1));
    ClassificationModel model = init_classification(cc, init_rng);
    if (config.epochs <= 0 || patients.empty()) return model;

    ClassificationModel grad = zeros_like(model);
    const auto params = parameters(model);
    const auto grads = parameters(grad);
    AdamWState state = make_adamw_state(params);
    const auto total_steps = static_cast<std::int64_t>(patients.size()) * config.epochs;
    std::vector<std::int32_t> order(patients.begin(), patients.end());
    Rng shuffle_rng(mix_seed(seed, 2));
    ClassificationCache cache;

    std::int64_t step = 0;
    for (std::int32_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        for (auto p : order) {
            const auto& bag = dataset.bags[static_cast<std::size_t>(p)];
            require(bag.survival_class != SurvivalClass::excluded, "precondition",
                    "patient " + bag.patient_id + " is excluded from classification");
            const auto view = bag_view(dataset, bag);
            const RowVector logits = forward_classification(model, view, &cache);
            const int label = bag.survival_class == SurvivalClass::short_term ? kShortLogit : kLongLogit;
            const double top = logits.maxCoeff();
            RowVector prob = (logits.array() - top).exp();
            prob /= prob.sum();
            check_finite(-std::log(prob[label]), "cross-entropy loss");
            RowVector d_logits = prob;
            d_logits[label] -= 1.0;
            zero(grads);
            backward_classification(model, view, cache, d_logits, grad);
            adamw_step(params, grads, state, config.adamw, cosine_lr(lr, step++, total_steps));
            ++model.revision;
        }
    }
    return model;
}

double evaluate_cox_loss(const RegressionModel& model, const Dataset& dataset,
                         std::span<const std::int32_t> patients) {
    std::vector<double> risks, times;
    std::unique_ptr<bool[]> events(new bool[patients.size()]);
    bool any_event = false;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const auto& bag = dataset.bags[static_cast<std::size_t>(patients[i])];
        risks.push_back(forward_regression(model, bag_view(dataset, bag)));
        times.push_back(bag.os_months);
        events[i] = bag.event;
        any_event = any_event || bag.event;
    }
    if (!any_event) return kNaN;
    return cox_loss(risks, times, std::span<const bool>(events.get(), patients.size())).value;
}

double evaluate_metric(Task task, const Dataset& dataset, std::span<const std::int32_t> patients,
                       std::span<const double> risks) {
    std::vector<double> times;
    std::unique_ptr<bool[]> flags(new bool[patients.size()]);
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const auto& bag = dataset.bags[static_cast<std::size_t>(patients[i])];
        times.push_back(bag.os_months);
        flags[i] = task == Task::regression ? bag.event
                                            : bag.survival_class == SurvivalClass::short_term;
    }
    const std::span<const bool> f(flags.get(), patients.size());
    try {
        return task == Task::regression ? concordance_index(risks, times, f) : auroc(risks, f);
    } catch (const Error&) {
        return kNaN;
    }
}

namespace {

RunResult run_fold(const Dataset& dataset, Task task, const TrainConfig& config,
                   const Fold& fold, std::int32_t fold_index, std::uint64_t seed) {
    require(!config.lr_grid.empty(), "precondition", "learning-rate grid is empty");
    RunResult run;
    run.fold = fold_index;
    run.seed = seed;
    const auto init_seed = mix_seed(seed, 0xf00 + static_cast<std::uint64_t>(fold_index));

    std::size_t best = 0;
    double best_score = kNaN;
    for (std::size_t i = 0; i < config.lr_grid.size(); ++i) {
        const double lr = config.lr_grid[i];
        double score = kNaN;
        if (task == Task::regression) {
            const auto m = fit_regression(dataset, fold.inner_train, config, lr, init_seed);
            // Lower loss is better; negate so that larger is better below.
            score = -evaluate_cox_loss(m, dataset, fold.inner_val);
        } else {
            const auto m = fit_classification(dataset, fold.inner_train, config, lr, init_seed);
            std::vector<double> risks;
            const Model wrapped = m;
            for (auto p : fold.inner_val) risks.push_back(predict_risk(wrapped, dataset, dataset.bags[p]));
            score = evaluate_metric(task, dataset, fold.inner_val, risks);
        }
        run.inner_scores.push_back(task == Task::regression ? -score : score);
        if (std::isfinite(score) && (!std::isfinite(best_score) || score > best_score)) {
            best_score = score;
            best = i;
        }
    }
    run.best_lr = config.lr_grid[best];
    if (task == Task::regression) {
        run.model = fit_regression(dataset, fold.train, config, run.best_lr, init_seed);
    } else {
        run.model = fit_classification(dataset, fold.train, config, run.best_lr, init_seed);
    }
    run.test_patients = fold.test;
    for (auto p : fold.test) run.test_risks.push_back(predict_risk(run.model, dataset, dataset.bags[p]));
    run.test_metric = evaluate_metric(task, dataset, fold.test, run.test_risks);
    return run;
}

}  // namespace

TrainResult train(const Dataset& dataset, Task task, const TrainConfig& config,
                  const FoldPlan& plan, std::uint64_t seed) {
    require(plan.task == task, "precondition", "fold plan was built for a different task");
    require(plan.stratum.size() == dataset.bags.size(), "precondition",
            "fold plan does not match the dataset");
    const auto n_seeds = static_cast<std::size_t>(std::max(config.ensemble, 1));

    TrainResult result;
    result.task = task;
    result.plan = plan;
    for (std::size_t s = 0; s < n_seeds; ++s) result.seeds.push_back(seed + s);
    result.runs.resize(plan.folds.size() * n_seeds);

    parallel_for(result.runs.size(), config.threads, [&](std::size_t job) {
        const auto f = job / n_seeds;
        try {
            result.runs[job] = run_fold(dataset, task, config, plan.folds[f],
                                        static_cast<std::int32_t>(f), result.seeds[job % n_seeds]);
        } catch (const Error& e) {
            throw Error(e.code(), "fold " + std::to_string(f) + ", seed " +
                                      std::to_string(result.seeds[job % n_seeds]) + ": " + e.what());
        }
    });

    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& test = plan.folds[f].test;
        std::vector<double> mean(test.size(), 0.0);
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto& r = result.runs[f * n_seeds + s];
            for (std::size_t i = 0; i < test.size(); ++i) mean[i] += r.test_risks[i];
        }
        for (auto& m : mean) m /= static_cast<double>(n_seeds);
        result.ensemble_test_metric.push_back(evaluate_metric(task, dataset, test, mean));
    }
    return result;
}

}  // namespace xcg
