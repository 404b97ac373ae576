#pragma once

#include "xcg/cellgraph.hpp"
#include "xcg/gridattr.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xcg {

/// Median with the midpoint rule for even counts. Throws on empty input.
double median(std::span<const double> values);

/// Median relevance over the cells of `phenotype_id`; nullopt if the graph has none.
std::optional<double> case_phenotype_median(const RelevanceMap& map, const CellGraph& graph,
                                            std::int32_t phenotype_id);

/// Two-sided Monte-Carlo permutation test on |median(a) - median(b)| with
/// the add-one estimate p = (#{permuted >= observed} + 1) / (n_iter + 1).
double permutation_test(std::span<const double> group_a, std::span<const double> group_b,
                        std::int32_t n_iter, std::uint64_t seed);

/// "***", "**", "*" for p below 0.001, 0.01, 0.05; "ns" otherwise.
std::string significance_stars(double p_value);

struct PhenotypeRelevanceSummary {
    std::int32_t phenotype_id = 0;
    std::vector<double> short_case_medians;
    std::vector<double> long_case_medians;
    std::optional<double> short_median;  // median over cases
    std::optional<double> long_median;
    double statistic = 0.0;  // |short_median - long_median|
    double p_value = 1.0;    // 1 when a group has no case with the phenotype
};

/// Per phenotype: case-level medians (cells pooled over a patient's graphs)
/// for short and long survivors, their group medians and a case-level
/// permutation test. Excluded patients are ignored. `maps` is indexed like
/// `dataset.graphs`.
std::vector<PhenotypeRelevanceSummary> cohort_summary(std::span<const RelevanceMap> maps,
                                                      const Dataset& dataset,
                                                      std::int32_t n_iter, std::uint64_t seed);

/// Phenotypes present in `cls` ordered by descending group median, ties by id.
std::vector<PhenotypeRelevanceSummary> ranking(std::span<const PhenotypeRelevanceSummary> summary,
                                               SurvivalClass cls);

}  // namespace xcg
