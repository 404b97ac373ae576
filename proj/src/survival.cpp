#include "xcg/survival.hpp"

#include "xcg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xcg {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
    require(a == b && b == c, "dimension", std::string(what) + ": input lengths differ");
}

// Fenwick tree over risk ranks.
class RankCounter {
public:
    explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}

    void add(std::size_t rank) {
        for (auto i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }

    // Number of inserted ranks < rank.
    long long below(std::size_t rank) const {
        long long s = 0;
        for (auto i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

private:
    std::vector<long long> tree_;
};

}  // namespace

CoxLoss cox_loss(std::span<const double> risks, std::span<const double> times,
                 std::span<const bool> events) {
    check_lengths(risks.size(), times.size(), events.size(), "cox_loss");
    const std::size_t n = risks.size();
    const auto n_events = std::count(events.begin(), events.end(), true);
    require(n_events > 0, "uninformative batch", "uninformative batch: no events");

    CoxLoss out;
    out.gradient.assign(n, 0.0);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        double top = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            if (times[j] >= times[i]) top = std::max(top, risks[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            w[j] = times[j] >= times[i] ? std::exp(risks[j] - top) : 0.0;
            sum += w[j];
        }
        out.value += std::log(sum) + top - risks[i];
        for (std::size_t j = 0; j < n; ++j) out.gradient[j] += w[j] / sum;
        out.gradient[i] -= 1.0;
    }
    const double scale = 1.0 / static_cast<double>(n_events);
    out.value *= scale;
    for (auto& g : out.gradient) g *= scale;
    return out;
}

double concordance_index(std::span<const double> risks, std::span<const double> times,
                         std::span<const bool> events) {
    check_lengths(risks.size(), times.size(), events.size(), "concordance_index");
    const std::size_t n = risks.size();

    // Dense ranks of risk values, equal risks share a rank.
    std::vector<double> sorted(risks.begin(), risks.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        rank[i] = static_cast<std::size_t>(
            std::lower_bound(sorted.begin(), sorted.end(), risks[i]) - sorted.begin());
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] > times[b]; });

    // Sweep from the longest time down; the counter holds strictly later patients.
    RankCounter later(sorted.size());
    long long inserted = 0;
    double concordant = 0.0;
    double comparable = 0.0;
    std::size_t g = 0;
    while (g < n) {
        std::size_t end = g;
        while (end < n && times[order[end]] == times[order[g]]) ++end;
        long long group_events = 0;
        for (auto p = g; p < end; ++p) {
            const auto i = order[p];
            if (!events[i]) continue;
            ++group_events;
            const auto lower = later.below(rank[i]);
            const auto tied = later.below(rank[i] + 1) - lower;
            comparable += static_cast<double>(inserted);
            concordant += static_cast<double>(lower) + 0.5 * static_cast<double>(tied);
        }
        // Events tied in time: both orderings are comparable, exactly one
        // credit per unordered pair whatever the risks are.
        const auto tied_pairs = group_events * (group_events - 1);
        comparable += static_cast<double>(tied_pairs);
        concordant += 0.5 * static_cast<double>(tied_pairs);
        for (auto p = g; p < end; ++p) later.add(rank[order[p]]);
        inserted += static_cast<long long>(end - g);
        g = end;
    }
    require(comparable > 0.0, "undefined C-index", "undefined C-index: no comparable pairs");
    return concordant / comparable;
}

double auroc(std::span<const double> scores, std::span<const bool> labels) {
    require(scores.size() == labels.size(), "dimension", "auroc: input lengths differ");
    const std::size_t n = scores.size();
    const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), true));
    const double n_neg = static_cast<double>(n) - n_pos;
    require(n_pos > 0 && n_neg > 0, "single class", "auroc needs both classes present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Midranks (1-based) summed over positives.
    double rank_sum = 0.0;
    std::size_t g = 0;
    while (g < n) {
        std::size_t end = g;
        while (end < n && scores[order[end]] == scores[order[g]]) ++end;
        const double midrank = 0.5 * static_cast<double>(g + 1 + end);
        for (auto p = g; p < end; ++p) {
            if (labels[order[p]]) rank_sum += midrank;
        }
        g = end;
    }
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double ensemble_predict(std::span<const double> member_risks) {
    require(!member_risks.empty(), "precondition", "ensemble needs at least one model");
    double sum = 0.0;
    for (auto r : member_risks) sum += r;
    return sum / static_cast<double>(member_risks.size());
}

}  // namespace xcg
