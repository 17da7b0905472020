#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cspine/core/errors.hpp"

namespace cspine {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

namespace detail {

template <typename Scalar>
struct Node {
    Shape shape;
    Vec<Scalar> data;
    Vec<Scalar> grad;
    bool requires_grad = false;
    bool has_grad = false;
    bool retain_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Receives this node's output gradient and accumulates into parents.
    std::function<void(const Vec<Scalar>&)> backward;

    bool is_leaf() const { return parents.empty(); }

    void accumulate(const Vec<Scalar>& g) {
        if (!requires_grad) return;
        if (!has_grad) {
            grad = g;
            has_grad = true;
        } else {
            grad += g;
        }
    }

    Vec<Scalar>& grad_buffer() {
        if (!has_grad) {
            grad = Vec<Scalar>::Zero(data.size());
            has_grad = true;
        }
        return grad;
    }
};

}  // namespace detail

/// Dense row-major n-dimensional array that records the operations producing
/// it so that `backward()` can populate gradients of every leaf that
/// requires them. Copies share the same underlying node.
template <typename Scalar>
class Tensor {
public:
    using scalar_type = Scalar;
    using Node = detail::Node<Scalar>;

    Tensor() : node_(std::make_shared<Node>()) { node_->data.resize(0); }

    Tensor(Shape shape, Vec<Scalar> data, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        for (Index d : shape)
            if (d < 0) throw ShapeError("negative extent in " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                             " values");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const Index n = shape_numel(shape);
        return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
    }

    static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
        const Index n = shape_numel(shape);
        return Tensor(std::move(shape), Vec<Scalar>::Constant(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
        Vec<Scalar> data(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values) data[i++] = v;
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    Index rank() const { return static_cast<Index>(node_->shape.size()); }
    Index dim(Index i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    Index numel() const { return node_->data.size(); }

    const Vec<Scalar>& data() const { return node_->data; }
    Scalar operator[](Index i) const { return node_->data[i]; }

    /// Writable values; only leaves may be mutated (optimizer updates, grad checks).
    Vec<Scalar>& mutable_data() {
        if (!node_->is_leaf()) throw ShapeError("cannot mutate a non-leaf tensor produced by " + std::string(node_->op));
        return node_->data;
    }

    Scalar item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return node_->has_grad; }
    const Vec<Scalar>& grad() const {
        if (!node_->has_grad) throw MissingGradient("tensor of shape " + shape_str(shape()) + " has no gradient");
        return node_->grad;
    }
    void zero_grad() {
        node_->grad = Vec<Scalar>::Zero(numel());
        node_->has_grad = true;
    }
    void clear_grad() {
        node_->grad.resize(0);
        node_->has_grad = false;
    }

    /// Same values, no graph history, no gradient tracking.
    Tensor detach() const { return Tensor(shape(), data(), false); }

    /// Deep copy of values and flags into a fresh leaf.
    Tensor clone() const { return Tensor(shape(), data(), requires_grad()); }

    /// Keep this interior node's gradient after backward() (used for Grad-CAM).
    void retain_grad() { node_->retain_grad = true; }

    const char* op() const { return node_->op; }
    bool is_leaf() const { return node_->is_leaf(); }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate
    /// across calls; interior gradients are recomputed each time.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

    /// Builds an operation result. `parents` that do not require gradients
    /// are dropped from the graph; if none remain the result is a constant.
    static Tensor make_result(Shape shape, Vec<Scalar> data, std::vector<Tensor> parents,
                              std::function<void(const Vec<Scalar>&)> backward, const char* op) {
        Tensor out(std::move(shape), std::move(data), false);
        out.node_->op = op;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            out.node_->requires_grad = true;
            for (const auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

private:
    std::shared_ptr<Node> node_;
};

template <typename Scalar>
void Tensor<Scalar>::backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar root, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order; each node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf()) n->has_grad = false;

    node_->accumulate(Vec<Scalar>::Ones(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf() || !n->has_grad || !n->backward) continue;
        n->backward(n->grad);
    }
    // Interior buffers are not needed once propagated.
    for (Node* n : order)
        if (!n->is_leaf() && !n->retain_grad) {
            n->grad.resize(0);
            n->has_grad = false;
        }
}

}  // namespace cspine
