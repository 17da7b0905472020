#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cspine/core/ops.hpp"
#include "cspine/nn/parameters.hpp"

namespace cspine::nn {

inline constexpr const char* kGateNames[4] = {"i", "f", "g", "o"};

/// Gate weights of one LSTM direction. W_* map input→gate, U_* hidden→gate.
template <typename Scalar>
struct LstmParams {
    Index input_dim = 0;
    Index hidden_dim = 0;
    // Indexed by gate: input, forget, cell candidate, output.
    Tensor<Scalar> W[4], U[4], b[4];

    void validate() const {
        for (int k = 0; k < 4; ++k) {
            const std::string gate = kGateNames[k];
            if (W[k].shape() != Shape{input_dim, hidden_dim})
                throw ShapeError("LSTM W_" + gate + ": expected " + shape_str({input_dim, hidden_dim}) + ", got " +
                                 shape_str(W[k].shape()));
            if (U[k].shape() != Shape{hidden_dim, hidden_dim})
                throw ShapeError("LSTM U_" + gate + ": expected " + shape_str({hidden_dim, hidden_dim}) + ", got " +
                                 shape_str(U[k].shape()));
            if (b[k].shape() != Shape{hidden_dim})
                throw ShapeError("LSTM b_" + gate + ": expected " + shape_str({hidden_dim}) + ", got " +
                                 shape_str(b[k].shape()));
        }
    }

    static LstmParams zeros(Index input_dim, Index hidden_dim) {
        LstmParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        for (int k = 0; k < 4; ++k) {
            p.W[k] = Tensor<Scalar>::zeros({input_dim, hidden_dim}, true);
            p.U[k] = Tensor<Scalar>::zeros({hidden_dim, hidden_dim}, true);
            p.b[k] = Tensor<Scalar>::zeros({hidden_dim}, true);
        }
        return p;
    }

    static LstmParams initialize(Index input_dim, Index hidden_dim, std::mt19937_64& rng) {
        // fan_in is input_dim for W, hidden_dim for U and b.
        LstmParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        for (int k = 0; k < 4; ++k) {
            p.W[k] = uniform_init<Scalar>({input_dim, hidden_dim}, input_dim, rng);
            p.U[k] = uniform_init<Scalar>({hidden_dim, hidden_dim}, hidden_dim, rng);
            p.b[k] = uniform_init<Scalar>({hidden_dim}, hidden_dim, rng);
        }
        return p;
    }

    void add_to(ParameterTable<Scalar>& table, const std::string& prefix) const {
        for (int k = 0; k < 4; ++k) {
            table.add(prefix + ".W_" + kGateNames[k], W[k]);
            table.add(prefix + ".U_" + kGateNames[k], U[k]);
            table.add(prefix + ".b_" + kGateNames[k], b[k]);
        }
    }

    static LstmParams from_table(const ParameterTable<Scalar>& table, const std::string& prefix) {
        LstmParams p;
        for (int k = 0; k < 4; ++k) {
            p.W[k] = table.get(prefix + ".W_" + kGateNames[k]);
            p.U[k] = table.get(prefix + ".U_" + kGateNames[k]);
            p.b[k] = table.get(prefix + ".b_" + kGateNames[k]);
        }
        p.input_dim = p.W[0].dim(0);
        p.hidden_dim = p.W[0].dim(1);
        p.validate();
        return p;
    }

    std::vector<Tensor<Scalar>> tensors() const {
        std::vector<Tensor<Scalar>> out;
        for (int k = 0; k < 4; ++k) out.insert(out.end(), {W[k], U[k], b[k]});
        return out;
    }
};

template <typename Scalar>
struct LstmState {
    Tensor<Scalar> h, c;
};

/// One LSTM cell update:
///   i,f,o = σ(x W + h U + b),  g = tanh(x W_g + h U_g + b_g)
///   c_t = f ⊙ c_prev + i ⊙ g,  h_t = o ⊙ tanh(c_t)
template <typename Scalar>
LstmState<Scalar> lstm_step(const Tensor<Scalar>& x, const Tensor<Scalar>& h_prev, const Tensor<Scalar>& c_prev,
                            const LstmParams<Scalar>& p) {
    detail::require(x.rank() == 2 && x.dim(1) == p.input_dim,
                    "lstm_step: input " + shape_str(x.shape()) + " vs input_dim " + std::to_string(p.input_dim));
    const Shape state{x.dim(0), p.hidden_dim};
    detail::require(h_prev.shape() == state && c_prev.shape() == state,
                    "lstm_step: state " + shape_str(h_prev.shape()) + "/" + shape_str(c_prev.shape()) + " vs " +
                        shape_str(state));
    auto pre = [&](int k) { return add(affine(x, p.W[k], p.b[k]), matmul(h_prev, p.U[k])); };
    auto i = sigmoid(pre(0));
    auto f = sigmoid(pre(1));
    auto g = tanh(pre(2));
    auto o = sigmoid(pre(3));
    auto c = add(mul(f, c_prev), mul(i, g));
    auto h = mul(o, tanh(c));
    return {h, c};
}

/// Runs both directions over `seq` (length N, items [B, input_dim]).
/// `lengths[b]` is item b's valid length; steps past it leave that item's
/// state unchanged. Returns [B, 2H]: the forward state after the last valid
/// step ⊕ the backward state after reaching t = 1.
template <typename Scalar>
Tensor<Scalar> blstm_forward(const std::vector<Tensor<Scalar>>& seq, const LstmParams<Scalar>& fwd,
                             const LstmParams<Scalar>& bwd, const std::vector<Index>& lengths) {
    if (seq.empty()) throw EmptySequence("blstm_forward: empty sequence");
    const Index batch = seq.front().dim(0);
    const Index n = static_cast<Index>(seq.size());
    detail::require(static_cast<Index>(lengths.size()) == batch,
                    "blstm_forward: " + std::to_string(lengths.size()) + " lengths for batch " + std::to_string(batch));
    for (Index len : lengths)
        if (len < 1 || len > n) throw ParamError("blstm_forward: valid length " + std::to_string(len) + " outside [1," +
                                                 std::to_string(n) + "]");
    detail::require(fwd.hidden_dim == bwd.hidden_dim, "blstm_forward: direction hidden sizes differ");

    auto run = [&](const LstmParams<Scalar>& p, bool reverse) {
        LstmState<Scalar> s{Tensor<Scalar>::zeros({batch, p.hidden_dim}), Tensor<Scalar>::zeros({batch, p.hidden_dim})};
        for (Index step = 0; step < n; ++step) {
            const Index t = reverse ? n - 1 - step : step;
            std::vector<bool> valid(static_cast<std::size_t>(batch));
            bool all = true, any = false;
            for (Index b = 0; b < batch; ++b) {
                valid[static_cast<std::size_t>(b)] = t < lengths[static_cast<std::size_t>(b)];
                all = all && valid[static_cast<std::size_t>(b)];
                any = any || valid[static_cast<std::size_t>(b)];
            }
            if (!any) continue;
            auto next = lstm_step(seq[static_cast<std::size_t>(t)], s.h, s.c, p);
            if (all) {
                s = next;
            } else {
                s = {select_rows(valid, next.h, s.h), select_rows(valid, next.c, s.c)};
            }
        }
        return s.h;
    };
    return concat_cols(run(fwd, false), run(bwd, true));
}

}  // namespace cspine::nn
