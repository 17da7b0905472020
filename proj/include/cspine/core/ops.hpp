#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cspine/core/tensor.hpp"

namespace cspine {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

inline std::string two_shapes(const Shape& a, const Shape& b) { return shape_str(a) + " vs " + shape_str(b); }

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + two_shapes(a.shape(), b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        a.shape(), a.data() + b.data(), {a, b},
        [an, bn](const Vec<Scalar>& g) {
            an->accumulate(g);
            bn->accumulate(g);
        },
        "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        a.shape(), a.data() - b.data(), {a, b},
        [an, bn](const Vec<Scalar>& g) {
            an->accumulate(g);
            bn->accumulate(-g);
        },
        "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        a.shape(), a.data() * b.data(), {a, b},
        [an, bn](const Vec<Scalar>& g) {
            if (an->requires_grad) an->accumulate(g * bn->data);
            if (bn->requires_grad) bn->accumulate(g * an->data);
        },
        "mul");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
    auto an = a.node();
    return Tensor<Scalar>::make_result(
        a.shape(), a.data() * s, {a}, [an, s](const Vec<Scalar>& g) { an->accumulate(g * s); }, "scale");
}

/// Multiplies by a constant (non-differentiable) array of the same size.
template <typename Scalar>
Tensor<Scalar> mul_const(const Tensor<Scalar>& a, const Vec<Scalar>& c) {
    detail::require(c.size() == a.numel(), "mul_const: size mismatch");
    auto an = a.node();
    return Tensor<Scalar>::make_result(
        a.shape(), a.data() * c, {a}, [an, c](const Vec<Scalar>& g) { an->accumulate(g * c); }, "mul_const");
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
    auto an = a.node();
    const Index n = a.numel();
    Vec<Scalar> out(1);
    out[0] = a.data().sum();
    return Tensor<Scalar>::make_result(
        {1}, std::move(out), {a}, [an, n](const Vec<Scalar>& g) { an->accumulate(Vec<Scalar>::Constant(n, g[0])); },
        "sum");
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
    detail::require(a.numel() > 0, "mean of empty tensor");
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
    detail::require(shape_numel(shape) == a.numel(), "reshape: " + detail::two_shapes(a.shape(), shape));
    auto an = a.node();
    return Tensor<Scalar>::make_result(
        std::move(shape), a.data(), {a}, [an](const Vec<Scalar>& g) { an->accumulate(g); }, "reshape");
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { Relu, Sigmoid, Tanh };

template <typename Scalar>
Tensor<Scalar> elementwise(const Tensor<Scalar>& x, Activation fn) {
    auto xn = x.node();
    const auto& v = x.data();
    switch (fn) {
        case Activation::Relu:
            return Tensor<Scalar>::make_result(
                x.shape(), v.max(Scalar(0)), {x},
                [xn](const Vec<Scalar>& g) { xn->accumulate((xn->data > Scalar(0)).select(g, Scalar(0))); }, "relu");
        case Activation::Sigmoid: {
            Vec<Scalar> y = Scalar(1) / (Scalar(1) + (-v).exp());
            Vec<Scalar> dy = y * (Scalar(1) - y);
            return Tensor<Scalar>::make_result(
                x.shape(), std::move(y), {x}, [xn, dy](const Vec<Scalar>& g) { xn->accumulate(g * dy); }, "sigmoid");
        }
        case Activation::Tanh: {
            Vec<Scalar> y = v.tanh();
            Vec<Scalar> dy = Scalar(1) - y.square();
            return Tensor<Scalar>::make_result(
                x.shape(), std::move(y), {x}, [xn, dy](const Vec<Scalar>& g) { xn->accumulate(g * dy); }, "tanh");
        }
    }
    throw ShapeError("unknown activation");
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) { return elementwise(x, Activation::Relu); }
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) { return elementwise(x, Activation::Sigmoid); }
template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) { return elementwise(x, Activation::Tanh); }

// ---------------------------------------------------------------------------
// Matrix products

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: " + detail::two_shapes(a.shape(), b.shape()));
    const Index n = a.dim(0), d = a.dim(1), m = b.dim(1);
    Vec<Scalar> out(n * m);
    MatMap<Scalar>(out.data(), n, m).noalias() = ConstMatMap<Scalar>(a.data().data(), n, d) *
                                                 ConstMatMap<Scalar>(b.data().data(), d, m);
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        {n, m}, std::move(out), {a, b},
        [an, bn, n, d, m](const Vec<Scalar>& g) {
            ConstMatMap<Scalar> G(g.data(), n, m);
            if (an->requires_grad) {
                MatMap<Scalar>(an->grad_buffer().data(), n, d).noalias() +=
                    G * ConstMatMap<Scalar>(bn->data.data(), d, m).transpose();
            }
            if (bn->requires_grad) {
                MatMap<Scalar>(bn->grad_buffer().data(), d, m).noalias() +=
                    ConstMatMap<Scalar>(an->data.data(), n, d).transpose() * G;
            }
        },
        "matmul");
}

/// input[N,D] · weight[D,M] + bias[M]
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
    detail::require(input.rank() == 2 && weight.rank() == 2 && input.dim(1) == weight.dim(0),
                    "affine: input " + shape_str(input.shape()) + " vs weight " + shape_str(weight.shape()));
    detail::require(bias.numel() == weight.dim(1),
                    "affine: weight " + shape_str(weight.shape()) + " vs bias " + shape_str(bias.shape()));
    const Index n = input.dim(0), d = input.dim(1), m = weight.dim(1);
    Vec<Scalar> out(n * m);
    MatMap<Scalar> O(out.data(), n, m);
    O.noalias() = ConstMatMap<Scalar>(input.data().data(), n, d) * ConstMatMap<Scalar>(weight.data().data(), d, m);
    O.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.data().data(), m);
    auto xn = input.node(), wn = weight.node(), bn = bias.node();
    return Tensor<Scalar>::make_result(
        {n, m}, std::move(out), {input, weight, bias},
        [xn, wn, bn, n, d, m](const Vec<Scalar>& g) {
            ConstMatMap<Scalar> G(g.data(), n, m);
            if (xn->requires_grad)
                MatMap<Scalar>(xn->grad_buffer().data(), n, d).noalias() +=
                    G * ConstMatMap<Scalar>(wn->data.data(), d, m).transpose();
            if (wn->requires_grad)
                MatMap<Scalar>(wn->grad_buffer().data(), d, m).noalias() +=
                    ConstMatMap<Scalar>(xn->data.data(), n, d).transpose() * G;
            if (bn->requires_grad)
                Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bn->grad_buffer().data(), m) += G.colwise().sum();
        },
        "affine");
}

// ---------------------------------------------------------------------------
// Row-wise structure for sequence models

/// [N,D1] ⊕ [N,D2] → [N,D1+D2]
template <typename Scalar>
Tensor<Scalar> concat_cols(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
                    "concat_cols: " + detail::two_shapes(a.shape(), b.shape()));
    const Index n = a.dim(0), da = a.dim(1), db = b.dim(1);
    Vec<Scalar> out(n * (da + db));
    MatMap<Scalar> O(out.data(), n, da + db);
    O.leftCols(da) = ConstMatMap<Scalar>(a.data().data(), n, da);
    O.rightCols(db) = ConstMatMap<Scalar>(b.data().data(), n, db);
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        {n, da + db}, std::move(out), {a, b},
        [an, bn, n, da, db](const Vec<Scalar>& g) {
            ConstMatMap<Scalar> G(g.data(), n, da + db);
            if (an->requires_grad) MatMap<Scalar>(an->grad_buffer().data(), n, da) += G.leftCols(da);
            if (bn->requires_grad) MatMap<Scalar>(bn->grad_buffer().data(), n, db) += G.rightCols(db);
        },
        "concat_cols");
}

/// Row r of the result comes from `a` where take_a[r], otherwise from `b`.
template <typename Scalar>
Tensor<Scalar> select_rows(const std::vector<bool>& take_a, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a, b, "select_rows");
    detail::require(a.rank() == 2 && static_cast<Index>(take_a.size()) == a.dim(0), "select_rows: mask length");
    const Index n = a.dim(0), d = a.dim(1);
    Vec<Scalar> out(n * d);
    MatMap<Scalar> O(out.data(), n, d);
    ConstMatMap<Scalar> A(a.data().data(), n, d), B(b.data().data(), n, d);
    for (Index r = 0; r < n; ++r) O.row(r) = take_a[static_cast<std::size_t>(r)] ? A.row(r) : B.row(r);
    auto an = a.node(), bn = b.node();
    return Tensor<Scalar>::make_result(
        {n, d}, std::move(out), {a, b},
        [an, bn, take_a, n, d](const Vec<Scalar>& g) {
            ConstMatMap<Scalar> G(g.data(), n, d);
            for (Index r = 0; r < n; ++r) {
                auto& target = take_a[static_cast<std::size_t>(r)] ? an : bn;
                if (target->requires_grad) MatMap<Scalar>(target->grad_buffer().data(), n, d).row(r) += G.row(r);
            }
        },
        "select_rows");
}

/// Stacks equal-shaped tensors along a new leading axis.
template <typename Scalar>
Tensor<Scalar> stack(std::span<const Tensor<Scalar>> items) {
    detail::require(!items.empty(), "stack: no tensors");
    const Shape& inner = items.front().shape();
    const Index k = items.front().numel();
    Vec<Scalar> out(k * static_cast<Index>(items.size()));
    std::vector<Tensor<Scalar>> parents;
    std::vector<std::shared_ptr<detail::Node<Scalar>>> nodes;
    for (std::size_t i = 0; i < items.size(); ++i) {
        detail::require(items[i].shape() == inner, "stack: " + detail::two_shapes(inner, items[i].shape()));
        out.segment(static_cast<Index>(i) * k, k) = items[i].data();
        parents.push_back(items[i]);
        nodes.push_back(items[i].node());
    }
    Shape shape{static_cast<Index>(items.size())};
    shape.insert(shape.end(), inner.begin(), inner.end());
    return Tensor<Scalar>::make_result(
        std::move(shape), std::move(out), std::move(parents),
        [nodes, k](const Vec<Scalar>& g) {
            for (std::size_t i = 0; i < nodes.size(); ++i)
                if (nodes[i]->requires_grad) nodes[i]->accumulate(g.segment(static_cast<Index>(i) * k, k));
        },
        "stack");
}

// ---------------------------------------------------------------------------
// Convolutional primitives (NCHW, row-major)

namespace detail {

struct ConvGeometry {
    Index c, h, w, kh, kw, stride, pad, ho, wo;
    Index patch() const { return c * kh * kw; }
    Index out_pixels() const { return ho * wo; }
};

template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g, Scalar* col) {
    // col is [c*kh*kw, ho*wo] row-major
    for (Index ch = 0; ch < g.c; ++ch)
        for (Index ki = 0; ki < g.kh; ++ki)
            for (Index kj = 0; kj < g.kw; ++kj) {
                Scalar* row = col + ((ch * g.kh + ki) * g.kw + kj) * g.out_pixels();
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ki;
                    Scalar* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, Scalar(0));
                        continue;
                    }
                    const Scalar* src = img + (ch * g.h + iy) * g.w;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kj;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Scalar(0);
                    }
                }
            }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* img) {
    for (Index ch = 0; ch < g.c; ++ch)
        for (Index ki = 0; ki < g.kh; ++ki)
            for (Index kj = 0; kj < g.kw; ++kj) {
                const Scalar* row = col + ((ch * g.kh + ki) * g.kw + kj) * g.out_pixels();
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    Scalar* dst = img + (ch * g.h + iy) * g.w;
                    const Scalar* src = row + oy * g.wo;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kj;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace detail

/// input[N,C,H,W] ⋆ kernel[F,C,kh,kw] + bias[F] with zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      Index stride = 1, Index padding = 0) {
    const std::string shapes = "input " + shape_str(input.shape()) + " vs kernel " + shape_str(kernel.shape());
    detail::require(input.rank() == 4 && kernel.rank() == 4, "conv2d: rank mismatch, " + shapes);
    detail::require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
    detail::require(input.dim(1) == kernel.dim(1), "conv2d: channel mismatch, " + shapes);
    detail::require(bias.numel() == kernel.dim(0), "conv2d: bias " + shape_str(bias.shape()) + " vs kernel " +
                                                       shape_str(kernel.shape()));
    detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
    detail::require(g.kh <= g.h + 2 * padding && g.kw <= g.w + 2 * padding, "conv2d: kernel exceeds padded input, " + shapes);
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    const Index n = input.dim(0), f = kernel.dim(0), in_sz = g.c * g.h * g.w, out_sz = f * g.out_pixels();

    auto cols = std::make_shared<std::vector<RowMatrix<Scalar>>>(static_cast<std::size_t>(n));
    Vec<Scalar> out(n * out_sz);
    ConstMatMap<Scalar> K(kernel.data().data(), f, g.patch());
    const auto b = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data().data(), f);
    for (Index i = 0; i < n; ++i) {
        auto& col = (*cols)[static_cast<std::size_t>(i)];
        col.resize(g.patch(), g.out_pixels());
        detail::im2col(input.data().data() + i * in_sz, g, col.data());
        MatMap<Scalar> O(out.data() + i * out_sz, f, g.out_pixels());
        O.noalias() = K * col;
        O.colwise() += b;
    }
    auto xn = input.node(), kn = kernel.node(), bn = bias.node();
    return Tensor<Scalar>::make_result(
        {n, f, g.ho, g.wo}, std::move(out), {input, kernel, bias},
        [xn, kn, bn, cols, g, n, f, in_sz, out_sz](const Vec<Scalar>& grad) {
            ConstMatMap<Scalar> K(kn->data.data(), f, g.patch());
            RowMatrix<Scalar> dcol;
            for (Index i = 0; i < n; ++i) {
                ConstMatMap<Scalar> G(grad.data() + i * out_sz, f, g.out_pixels());
                if (kn->requires_grad)
                    MatMap<Scalar>(kn->grad_buffer().data(), f, g.patch()).noalias() +=
                        G * (*cols)[static_cast<std::size_t>(i)].transpose();
                if (bn->requires_grad)
                    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bn->grad_buffer().data(), f) += G.rowwise().sum();
                if (xn->requires_grad) {
                    dcol.noalias() = K.transpose() * G;
                    detail::col2im_add(dcol.data(), g, xn->grad_buffer().data() + i * in_sz);
                }
            }
        },
        "conv2d");
}

/// Window maximum; gradient routed to the first (lowest flat index) maximum.
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index k, Index stride) {
    detail::require(input.rank() == 4, "max_pool2d: expected rank 4, got " + shape_str(input.shape()));
    detail::require(k >= 1 && stride >= 1, "max_pool2d: invalid window");
    const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    detail::require(k <= h && k <= w, "max_pool2d: window " + std::to_string(k) + " exceeds " + shape_str(input.shape()));
    const Index ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    Vec<Scalar> out(n * c * ho * wo);
    auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
    const Scalar* x = input.data().data();
    Index o = 0;
    for (Index plane = 0; plane < n * c; ++plane) {
        const Index base = plane * h * w;
        for (Index oy = 0; oy < ho; ++oy)
            for (Index ox = 0; ox < wo; ++ox, ++o) {
                Index best = base + (oy * stride) * w + ox * stride;
                for (Index dy = 0; dy < k; ++dy)
                    for (Index dx = 0; dx < k; ++dx) {
                        const Index idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                out[o] = x[best];
                (*argmax)[static_cast<std::size_t>(o)] = best;
            }
    }
    auto xn = input.node();
    return Tensor<Scalar>::make_result(
        {n, c, ho, wo}, std::move(out), {input},
        [xn, argmax](const Vec<Scalar>& g) {
            auto& buf = xn->grad_buffer();
            for (std::size_t i = 0; i < argmax->size(); ++i) buf[(*argmax)[i]] += g[static_cast<Index>(i)];
        },
        "max_pool2d");
}

/// [N,C,H,W] → [N,C] spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
    detail::require(input.rank() == 4, "global_avg_pool: expected rank 4, got " + shape_str(input.shape()));
    const Index n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    detail::require(hw >= 1, "global_avg_pool: empty spatial extent " + shape_str(input.shape()));
    ConstMatMap<Scalar> X(input.data().data(), n * c, hw);
    Vec<Scalar> out = X.rowwise().mean().array();
    auto xn = input.node();
    return Tensor<Scalar>::make_result(
        {n, c}, std::move(out), {input},
        [xn, n, c, hw](const Vec<Scalar>& g) {
            MatMap<Scalar>(xn->grad_buffer().data(), n * c, hw).colwise() +=
                (g / static_cast<Scalar>(hw)).matrix();
        },
        "global_avg_pool");
}

}  // namespace cspine
