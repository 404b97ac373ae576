#include "xcg/optim.hpp"

#include "xcg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace xcg {

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return base_lr;
    const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) /
                     static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamWState make_adamw_state(std::span<const ParamRef> params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.values.size();
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
}

void adamw_step(std::span<const ParamRef> params, std::span<const ParamRef> grads,
                AdamWState& state, const AdamWConfig& config, double lr) {
    require(params.size() == grads.size(), "dimension", "adamw: params/grads count mismatch");
    const auto t = static_cast<double>(state.step + 1);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);

    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].values;
        const auto g = grads[i].values;
        require(theta.size() == g.size(), "dimension", "adamw: shape mismatch for " + params[i].name);
        require(offset + theta.size() <= state.first_moment.size(), "dimension",
                "adamw: state smaller than parameter set");
        for (std::size_t j = 0; j < theta.size(); ++j) {
            double& m = state.first_moment[offset + j];
            double& v = state.second_moment[offset + j];
            m = config.beta1 * m + (1.0 - config.beta1) * g[j];
            v = config.beta2 * v + (1.0 - config.beta2) * g[j] * g[j];
            theta[j] -= lr * config.weight_decay * theta[j];
            theta[j] -= lr * (m / correction1) / (std::sqrt(v / correction2) + config.eps);
        }
        offset += theta.size();
    }
    ++state.step;
}

}  // namespace xcg
