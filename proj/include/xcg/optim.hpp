#pragma once

#include "xcg/gnn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace xcg {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step = 0;  // completed updates
};

/// base_lr * (1 + cos(pi * step / total_steps)) / 2, clamped to step in [0, total_steps].
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps);

AdamWState make_adamw_state(std::span<const ParamRef> params);

/// One decoupled-weight-decay Adam update at learning rate `lr`; `params`
/// and `grads` must list the same shapes in the same order.
void adamw_step(std::span<const ParamRef> params, std::span<const ParamRef> grads,
                AdamWState& state, const AdamWConfig& config, double lr);

}  // namespace xcg
