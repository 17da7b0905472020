#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "cspine/core/ops.hpp"

namespace cspine::nn {

/// Inverted dropout: in training, zero each element with probability p and
/// scale survivors by 1/(1−p). Identity at inference.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool training, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ParamError("dropout rate " + std::to_string(p) + " outside [0,1)");
    if (!training || p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const Scalar survivor = static_cast<Scalar>(1.0 / (1.0 - p));
    Vec<Scalar> mask(x.numel());
    for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? survivor : Scalar(0);
    return mul_const(x, mask);
}

inline constexpr double kBceClamp = 1e-7;

/// mean(−(y ln p + (1−y) ln(1−p))) with p clamped to [ε, 1−ε].
template <typename Scalar>
Tensor<Scalar> bce_loss(const Tensor<Scalar>& p, const Tensor<Scalar>& y) {
    detail::require(p.numel() == y.numel(), "bce_loss: " + detail::two_shapes(p.shape(), y.shape()));
    detail::require(p.numel() > 0, "bce_loss: empty input");
    const Scalar eps = static_cast<Scalar>(kBceClamp);
    const Vec<Scalar> pc = p.data().max(eps).min(Scalar(1) - eps);
    const Vec<Scalar>& t = y.data();
    const Scalar n = static_cast<Scalar>(p.numel());
    Vec<Scalar> out(1);
    out[0] = -(t * pc.log() + (Scalar(1) - t) * (Scalar(1) - pc).log()).sum() / n;
    auto pn = p.node();
    const Vec<Scalar> dp = (pc - t) / (pc * (Scalar(1) - pc)) / n;
    return Tensor<Scalar>::make_result(
        {1}, std::move(out), {p}, [pn, dp](const Vec<Scalar>& g) { pn->accumulate(dp * g[0]); }, "bce_loss");
}

}  // namespace cspine::nn
