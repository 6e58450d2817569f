#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>

#include <Eigen/Dense>

#include "kqkit/error.hpp"

namespace kqkit {

/// One-cycle schedule constants.
struct OneCycleConfig {
    double warmup_fraction = 0.3;   // share of steps spent increasing the learning rate
    double initial_div = 25.0;      // lr(0) = max_lr / initial_div
    double final_div = 10000.0;     // lr(T-1) = max_lr / final_div
    double base_momentum = 0.85;
    double max_momentum = 0.95;
};

struct ScheduleValue {
    double lr = 0.0;
    double momentum = 0.0;
};

namespace detail {
inline double cosine_anneal(double start, double end, double pct) {
    return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
}
}  // namespace detail

/// Cosine one-cycle: lr rises from max/25 to max over the first 30% of steps, then decays to
/// max/10000 at the last step; momentum moves the opposite way between 0.95 and 0.85.
inline ScheduleValue one_cycle_lr(std::size_t step, std::size_t total_steps, double max_lr,
                                  const OneCycleConfig& cfg = {}) {
    if (total_steps == 0 || step >= total_steps) throw Error("schedule step out of range");
    const double s = static_cast<double>(step);
    const double peak = cfg.warmup_fraction * static_cast<double>(total_steps);
    const double last = static_cast<double>(total_steps - 1);
    const double lr0 = max_lr / cfg.initial_div;
    const double lr_end = max_lr / cfg.final_div;
    if (s <= peak) {
        const double pct = peak > 0.0 ? s / peak : 1.0;
        return {detail::cosine_anneal(lr0, max_lr, pct),
                detail::cosine_anneal(cfg.max_momentum, cfg.base_momentum, pct)};
    }
    const double span = last - peak;
    const double pct = span > 0.0 ? (s - peak) / span : 1.0;
    return {detail::cosine_anneal(max_lr, lr_end, pct),
            detail::cosine_anneal(cfg.base_momentum, cfg.max_momentum, pct)};
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // decoupled; applied to weights only
};

/// First/second moments for one parameter tensor.
struct AdamMoments {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
    std::size_t steps = 0;
};

/// One bias-corrected Adam update with decoupled weight decay. `beta1` overrides the configured
/// first-moment coefficient (the one-cycle schedule drives it as momentum).
template <typename Derived, typename GradDerived>
void adam_step(Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<GradDerived>& grad, AdamMoments& state,
               double lr, const AdamConfig& cfg, bool decay, double beta1) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols()) throw Error("adam: shape mismatch");
    if (state.steps == 0) {
        state.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
        state.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    }
    ++state.steps;
    state.m = beta1 * state.m + (1.0 - beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double t = static_cast<double>(state.steps);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    if (decay && cfg.weight_decay != 0.0) param *= (1.0 - lr * cfg.weight_decay);
    param -= (lr * (state.m / c1).array() / ((state.v / c2).array().sqrt() + cfg.eps)).matrix();
}

template <typename Derived, typename GradDerived>
void adam_step(Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<GradDerived>& grad, AdamMoments& state,
               double lr, const AdamConfig& cfg = {}, bool decay = true) {
    adam_step(param, grad, state, lr, cfg, decay, cfg.beta1);
}

}  // namespace kqkit
