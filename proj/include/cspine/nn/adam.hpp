#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cspine/core/tensor.hpp"

namespace cspine::nn {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Step decay: lr(epoch) = lr · gamma^floor(epoch / decay_period).
    int decay_period = 5;
    double gamma = 0.2;
};

/// Learning rate after step decay.
inline double step_decay_lr(const AdamOptions& o, int epoch) {
    return o.learning_rate * std::pow(o.gamma, static_cast<double>(epoch / o.decay_period));
}

template <typename Scalar>
class Adam {
public:
    Adam(std::vector<Tensor<Scalar>> params, AdamOptions options) : params_(std::move(params)), options_(options) {
        if (!(options_.learning_rate > 0)) throw ParamError("Adam learning rate must be positive");
        if (!(options_.gamma > 0 && options_.gamma <= 1)) throw ParamError("Adam decay gamma must lie in (0,1]");
        if (options_.decay_period < 1) throw ParamError("Adam decay period must be >= 1");
        for (const auto& p : params_) {
            m_.push_back(Vec<Scalar>::Zero(p.numel()));
            v_.push_back(Vec<Scalar>::Zero(p.numel()));
        }
    }

    /// One update using the parameters' current gradients, which are cleared.
    void step(int epoch) {
        for (const auto& p : params_)
            if (!p.has_grad()) throw MissingGradient("Adam step: parameter of shape " + shape_str(p.shape()) +
                                                     " has no gradient");
        ++t_;
        const double lr = step_decay_lr(options_, epoch);
        const Scalar b1 = static_cast<Scalar>(options_.beta1), b2 = static_cast<Scalar>(options_.beta2);
        const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(options_.beta1, static_cast<double>(t_)));
        const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(options_.beta2, static_cast<double>(t_)));
        const Scalar eps = static_cast<Scalar>(options_.epsilon);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            const Vec<Scalar>& g = p.grad();
            m_[k] = b1 * m_[k] + (Scalar(1) - b1) * g;
            v_[k] = b2 * v_[k] + (Scalar(1) - b2) * g.square();
            p.mutable_data() -= static_cast<Scalar>(lr) * (m_[k] / c1) / ((v_[k] / c2).sqrt() + eps);
            p.clear_grad();
        }
    }

    std::int64_t steps() const { return t_; }
    const AdamOptions& options() const { return options_; }
    const Vec<Scalar>& first_moment(std::size_t k) const { return m_[k]; }
    const Vec<Scalar>& second_moment(std::size_t k) const { return v_[k]; }

private:
    std::vector<Tensor<Scalar>> params_;
    AdamOptions options_;
    std::vector<Vec<Scalar>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace cspine::nn
