#pragma once

#include "xcg/cellgraph.hpp"
#include "xcg/gnn.hpp"
#include "xcg/optim.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace xcg {

enum class Task { regression, classification };

std::string to_string(Task task);
Task parse_task(const std::string& text);

struct Fold {
    std::vector<std::int32_t> train;        // outer train (bag indices)
    std::vector<std::int32_t> inner_train;
    std::vector<std::int32_t> inner_val;
    std::vector<std::int32_t> test;
};

/// Stratified outer folds with one stratified inner split per fold.
/// Regression strata are (event, stage); classification strata are the
/// survival class, with excluded patients dropped.
struct FoldPlan {
    Task task = Task::regression;
    std::int32_t n_folds = 5;
    std::uint64_t seed = 0;
    std::vector<std::int32_t> stratum;  // per bag, -1 when ineligible
    std::vector<std::int32_t> fold_of;  // per bag, -1 when ineligible
    std::vector<Fold> folds;
    std::vector<std::string> warnings;
};

FoldPlan make_folds(std::span<const PatientBag> bags, Task task, std::uint64_t seed,
                    std::int32_t n_folds = 5, double inner_val_fraction = 0.2);

struct TrainConfig {
    std::vector<double> lr_grid{5e-5, 1e-5, 5e-6};
    std::int32_t batch_size = 16;  // regression only; classification is online
    std::int32_t epochs = 50;
    AdamWConfig adamw;
    std::int32_t hidden = 64;
    std::int32_t layers = 3;  // regression blocks or classifier GIN layers
    double pool_ratio = 0.5;
    double eps_gin = 0.0;
    bool fuse_stage = true;
    std::int32_t ensemble = 1;  // seeds per fold
    std::int32_t threads = 1;
};

using Model = std::variant<RegressionModel, ClassificationModel>;

Task task_of(const Model& model);

/// Risk for regression models, probability of short survival for classifiers.
double predict_risk(const Model& model, const Dataset& dataset, const PatientBag& bag);

/// Mean risk over regression ensemble members.
double ensemble_predict(std::span<const RegressionModel> models, const BagView& bag);

RegressionModel fit_regression(const Dataset& dataset, std::span<const std::int32_t> patients,
                               const TrainConfig& config, double lr, std::uint64_t seed);

ClassificationModel fit_classification(const Dataset& dataset,
                                       std::span<const std::int32_t> patients,
                                       const TrainConfig& config, double lr, std::uint64_t seed);

/// Full-batch Cox loss over `patients` (NaN when none has an event).
double evaluate_cox_loss(const RegressionModel& model, const Dataset& dataset,
                         std::span<const std::int32_t> patients);

/// C-index (regression) or AUROC with short survival as positive
/// (classification) of `risks` against the bags; NaN when undefined.
double evaluate_metric(Task task, const Dataset& dataset, std::span<const std::int32_t> patients,
                       std::span<const double> risks);

struct RunResult {
    std::int32_t fold = 0;
    std::uint64_t seed = 0;
    double best_lr = 0.0;
    std::vector<double> inner_scores;  // per lr_grid entry
    double test_metric = 0.0;
    std::vector<std::int32_t> test_patients;
    std::vector<double> test_risks;
    Model model;
};

struct TrainResult {
    Task task = Task::regression;
    FoldPlan plan;
    std::vector<std::uint64_t> seeds;
    std::vector<RunResult> runs;               // fold-major, seed-minor
    std::vector<double> ensemble_test_metric;  // per fold, mean risk over seeds
};

/// Nested cross-validation: per outer fold and seed, pick the learning rate
/// on the inner split, refit on the outer train set, score the outer test set.
TrainResult train(const Dataset& dataset, Task task, const TrainConfig& config,
                  const FoldPlan& plan, std::uint64_t seed);

}  // namespace xcg
