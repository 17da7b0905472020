#pragma once

#include <random>
#include <vector>

#include "cspine/nn/layers.hpp"
#include "cspine/nn/lstm.hpp"

namespace cspine::nn {

/// Case-level head: bidirectional LSTM readout → dropout → one logit.
template <typename Scalar>
class BlstmClassifier {
public:
    BlstmClassifier() = default;
    BlstmClassifier(Index input_dim, Index hidden_dim, ParameterTable<Scalar> params)
        : input_dim_(input_dim), hidden_dim_(hidden_dim), params_(std::move(params)) {
        for (const auto& [name, shape] : parameter_shapes(input_dim, hidden_dim)) {
            if (!params_.contains(name)) throw ParamError("missing parameter " + name);
            if (params_.get(name).shape() != shape)
                throw ShapeError("parameter " + name + ": expected " + shape_str(shape) + ", got " +
                                 shape_str(params_.get(name).shape()));
        }
    }

    static BlstmClassifier initialize(Index input_dim, Index hidden_dim, std::uint64_t seed) {
        if (input_dim < 1 || hidden_dim < 1) throw ParamError("BLSTM dimensions must be positive");
        std::mt19937_64 rng(seed);
        ParameterTable<Scalar> t;
        LstmParams<Scalar>::initialize(input_dim, hidden_dim, rng).add_to(t, "blstm.fwd");
        LstmParams<Scalar>::initialize(input_dim, hidden_dim, rng).add_to(t, "blstm.bwd");
        t.add("blstm.head.w", uniform_init<Scalar>({2 * hidden_dim, 1}, 2 * hidden_dim, rng));
        t.add("blstm.head.b", uniform_init<Scalar>({1}, 2 * hidden_dim, rng));
        return BlstmClassifier(input_dim, hidden_dim, std::move(t));
    }

    static std::vector<std::pair<std::string, Shape>> parameter_shapes(Index input_dim, Index hidden_dim) {
        std::vector<std::pair<std::string, Shape>> out;
        for (const char* dir : {"blstm.fwd", "blstm.bwd"})
            for (const char* gate : kGateNames) {
                out.push_back({std::string(dir) + ".W_" + gate, {input_dim, hidden_dim}});
                out.push_back({std::string(dir) + ".U_" + gate, {hidden_dim, hidden_dim}});
                out.push_back({std::string(dir) + ".b_" + gate, {hidden_dim}});
            }
        out.push_back({"blstm.head.w", {2 * hidden_dim, 1}});
        out.push_back({"blstm.head.b", {1}});
        return out;
    }

    /// [B, 2H] concatenated direction states.
    Tensor<Scalar> readout(const std::vector<Tensor<Scalar>>& seq, const std::vector<Index>& lengths) const {
        return blstm_forward(seq, LstmParams<Scalar>::from_table(params_, "blstm.fwd"),
                             LstmParams<Scalar>::from_table(params_, "blstm.bwd"), lengths);
    }

    /// [B, 1] case logits.
    Tensor<Scalar> forward(const std::vector<Tensor<Scalar>>& seq, const std::vector<Index>& lengths,
                           double dropout_p, bool training, std::mt19937_64& rng) const {
        auto r = dropout(readout(seq, lengths), dropout_p, training, rng);
        return affine(r, params_.get("blstm.head.w"), params_.get("blstm.head.b"));
    }

    Index input_dim() const { return input_dim_; }
    Index hidden_dim() const { return hidden_dim_; }
    const ParameterTable<Scalar>& parameters() const { return params_; }
    ParameterTable<Scalar>& parameters() { return params_; }

private:
    Index input_dim_ = 0;
    Index hidden_dim_ = 0;
    ParameterTable<Scalar> params_;
};

}  // namespace cspine::nn
