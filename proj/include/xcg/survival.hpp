#pragma once

#include <span>
#include <vector>

namespace xcg {

struct CoxLoss {
    double value = 0.0;
    std::vector<double> gradient;  // d value / d risk
};

/// Cox negative partial log-likelihood averaged over events, with risk sets
/// {j : t_j >= t_i} taken within the given batch (no tie correction).
/// Throws "uninformative batch" when no event is present.
CoxLoss cox_loss(std::span<const double> risks, std::span<const double> times,
                 std::span<const bool> events);

/// Harrell's C. Ordered pair (i, j) is comparable when event_i and either
/// t_i < t_j, or t_i == t_j with event_j; concordant when risk_i > risk_j,
/// half credit on risk ties. O(n log n).
double concordance_index(std::span<const double> risks, std::span<const double> times,
                         std::span<const bool> events);

/// Mann-Whitney AUROC with positives labelled true; ties count one half.
double auroc(std::span<const double> scores, std::span<const bool> labels);

/// Arithmetic mean of member risks.
double ensemble_predict(std::span<const double> member_risks);

}  // namespace xcg
