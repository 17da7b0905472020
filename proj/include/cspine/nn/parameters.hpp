#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cspine/core/tensor.hpp"

namespace cspine::nn {

/// Insertion-ordered name → tensor table of learnable parameters.
template <typename Scalar>
class ParameterTable {
public:
    void add(const std::string& name, Tensor<Scalar> t) {
        if (index_.count(name)) throw ParamError("duplicate parameter " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<Scalar>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ParamError("unknown parameter " + name);
        return entries_[it->second].second;
    }
    Tensor<Scalar>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ParamError("unknown parameter " + name);
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }
    const auto& entries() const { return entries_; }
    auto& entries() { return entries_; }

    std::vector<Tensor<Scalar>> tensors() const {
        std::vector<Tensor<Scalar>> out;
        for (const auto& [_, t] : entries_) out.push_back(t);
        return out;
    }

    void set_requires_grad(bool on) {
        for (auto& [_, t] : entries_) t.set_requires_grad(on);
    }

    Index numel() const {
        Index n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// uniform(−k, k) with k = 1/√fan_in.
template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, Index fan_in, std::mt19937_64& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    Vec<Scalar> v(shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

/// uniform(−k, k) with k = √(6/fan_in): keeps the activation variance of a
/// relu stack without normalization layers roughly constant with depth.
template <typename Scalar>
Tensor<Scalar> he_uniform_init(Shape shape, Index fan_in, std::mt19937_64& rng) {
    const double k = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    Vec<Scalar> v(shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

/// Converts every parameter to another precision (values only, fresh leaves).
template <typename To, typename From>
ParameterTable<To> cast_parameters(const ParameterTable<From>& in) {
    ParameterTable<To> out;
    for (const auto& [name, t] : in.entries())
        out.add(name, Tensor<To>(t.shape(), t.data().template cast<To>(), t.requires_grad()));
    return out;
}

}  // namespace cspine::nn
