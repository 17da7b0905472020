#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cspine/core/tensor.hpp"

namespace cspine {

struct ParamGradDiff {
    double max_abs_diff = 0.0;
    double max_rel_diff = 0.0;
};

struct GradReport {
    std::vector<ParamGradDiff> params;
    double rtol = 0.0;
    bool pass = true;

    double max_rel_diff() const {
        double m = 0.0;
        for (const auto& p : params) m = std::max(m, p.max_rel_diff);
        return m;
    }
};

/// Differences at or below this are accepted regardless of their relative size.
inline constexpr double kGradCheckAbsFloor = 1e-8;

/// Compares analytic gradients of `loss_fn` with central differences
/// (f(θ+ε) − f(θ−ε)) / 2ε, coordinate by coordinate. `params` must be leaves
/// with requires_grad set; their existing gradients are discarded.
template <typename Scalar>
GradReport grad_check(const std::function<Tensor<Scalar>()>& loss_fn, std::vector<Tensor<Scalar>> params,
                      Scalar epsilon = Scalar(1e-6), Scalar rtol = Scalar(1e-5)) {
    if (!(epsilon > Scalar(0))) throw ParamError("grad_check epsilon must be positive");

    for (auto& p : params) p.clear_grad();
    const Tensor<Scalar> loss = loss_fn();
    const Scalar again = loss_fn().item();
    if (loss.item() != again)
        throw NondeterministicLoss("two evaluations gave " + std::to_string(loss.item()) + " and " +
                                   std::to_string(again));
    loss.backward();

    GradReport report;
    report.rtol = static_cast<double>(rtol);
    for (auto& p : params) {
        Vec<Scalar> analytic = p.has_grad() ? p.grad() : Vec<Scalar>::Zero(p.numel());
        ParamGradDiff diff;
        auto& values = p.mutable_data();
        for (Index i = 0; i < values.size(); ++i) {
            const Scalar saved = values[i];
            values[i] = saved + epsilon;
            const Scalar up = loss_fn().item();
            values[i] = saved - epsilon;
            const Scalar down = loss_fn().item();
            values[i] = saved;
            const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * epsilon);
            const double a = static_cast<double>(analytic[i]);
            const double abs_diff = std::abs(a - numeric);
            const double rel = abs_diff <= kGradCheckAbsFloor ? 0.0 : abs_diff / std::max(std::abs(a), std::abs(numeric));
            diff.max_abs_diff = std::max(diff.max_abs_diff, abs_diff);
            diff.max_rel_diff = std::max(diff.max_rel_diff, rel);
        }
        report.pass = report.pass && diff.max_rel_diff <= report.rtol;
        report.params.push_back(diff);
        p.clear_grad();
    }
    return report;
}

}  // namespace cspine
