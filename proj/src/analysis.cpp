#include "xcg/analysis.hpp"

#include "xcg/error.hpp"
#include "xcg/random.hpp"

#include <algorithm>
#include <cmath>

namespace xcg {

double median(std::span<const double> values) {
    require(!values.empty(), "precondition", "median of an empty set");
    std::vector<double> v(values.begin(), values.end());
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

std::optional<double> case_phenotype_median(const RelevanceMap& map, const CellGraph& graph,
                                            std::int32_t phenotype_id) {
    require(map.relevance.size() == graph.cells.size(), "precondition",
            "relevance map does not match graph " + graph.graph_id);
    std::vector<double> values;
    for (std::size_t i = 0; i < graph.cells.size(); ++i) {
        if (graph.cells[i].phenotype_id == phenotype_id) values.push_back(map.relevance[i]);
    }
    if (values.empty()) return std::nullopt;
    return median(values);
}

double permutation_test(std::span<const double> group_a, std::span<const double> group_b,
                        std::int32_t n_iter, std::uint64_t seed) {
    require(!group_a.empty() && !group_b.empty(), "precondition",
            "permutation test needs two nonempty groups");
    require(n_iter >= 1, "precondition", "permutation test needs n_iter >= 1");
    const double observed = std::abs(median(group_a) - median(group_b));
    // Medians of the same values can differ by rounding across splits.
    const double threshold = observed - 1e-12 * std::max(1.0, observed);

    std::vector<double> pooled(group_a.begin(), group_a.end());
    pooled.insert(pooled.end(), group_b.begin(), group_b.end());
    const auto na = static_cast<std::ptrdiff_t>(group_a.size());
    Rng rng(seed);
    std::int64_t extreme = 0;
    for (std::int32_t it = 0; it < n_iter; ++it) {
        rng.shuffle(std::span(pooled));
        const double stat = std::abs(median({pooled.data(), static_cast<std::size_t>(na)}) -
                                     median({pooled.data() + na, pooled.size() - static_cast<std::size_t>(na)}));
        if (stat >= threshold) ++extreme;
    }
    return static_cast<double>(extreme + 1) / static_cast<double>(n_iter + 1);
}

std::string significance_stars(double p_value) {
    if (p_value < 0.001) return "***";
    if (p_value < 0.01) return "**";
    if (p_value < 0.05) return "*";
    return "ns";
}

std::vector<PhenotypeRelevanceSummary> cohort_summary(std::span<const RelevanceMap> maps,
                                                      const Dataset& dataset,
                                                      std::int32_t n_iter, std::uint64_t seed) {
    require(maps.size() == dataset.graphs.size(), "precondition",
            "need one relevance map per graph");
    std::vector<PhenotypeRelevanceSummary> out;
    for (std::int32_t ph = 0; ph < dataset.n_phenotypes; ++ph) {
        PhenotypeRelevanceSummary s;
        s.phenotype_id = ph;
        for (const auto& bag : dataset.bags) {
            if (bag.survival_class == SurvivalClass::excluded) continue;
            std::vector<double> values;
            for (auto g : bag.graphs) {
                const auto& graph = dataset.graphs[static_cast<std::size_t>(g)];
                const auto& map = maps[static_cast<std::size_t>(g)];
                require(map.relevance.size() == graph.cells.size(), "precondition",
                        "relevance map does not match graph " + graph.graph_id);
                for (std::size_t i = 0; i < graph.cells.size(); ++i) {
                    if (graph.cells[i].phenotype_id == ph) values.push_back(map.relevance[i]);
                }
            }
            if (values.empty()) continue;
            (bag.survival_class == SurvivalClass::short_term ? s.short_case_medians : s.long_case_medians)
                .push_back(median(values));
        }
        if (!s.short_case_medians.empty()) s.short_median = median(s.short_case_medians);
        if (!s.long_case_medians.empty()) s.long_median = median(s.long_case_medians);
        if (s.short_median && s.long_median) {
            s.statistic = std::abs(*s.short_median - *s.long_median);
            s.p_value = permutation_test(s.short_case_medians, s.long_case_medians, n_iter,
                                         mix_seed(seed, static_cast<std::uint64_t>(ph)));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PhenotypeRelevanceSummary> ranking(std::span<const PhenotypeRelevanceSummary> summary,
                                               SurvivalClass cls) {
    require(cls != SurvivalClass::excluded, "precondition", "no ranking for excluded patients");
    const auto value = [cls](const PhenotypeRelevanceSummary& s) {
        return cls == SurvivalClass::short_term ? s.short_median : s.long_median;
    };
    std::vector<PhenotypeRelevanceSummary> out;
    for (const auto& s : summary) {
        if (value(s)) out.push_back(s);
    }
    std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
        return *value(a) != *value(b) ? *value(a) > *value(b) : a.phenotype_id < b.phenotype_id;
    });
    return out;
}

}  // namespace xcg
