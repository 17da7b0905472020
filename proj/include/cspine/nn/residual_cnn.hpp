#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cspine/core/ops.hpp"
#include "cspine/nn/parameters.hpp"

namespace cspine::nn {

/// Residual CNN feature extractor: stages of plain conv+relu residual blocks,
/// global average pooling to a feature vector, and a one-logit linear head.
struct ResidualCnnConfig {
    Index in_channels = 3;
    std::vector<Index> widths{16, 32, 64};
    std::vector<Index> blocks{1, 1, 1};
    // Stride of the first block in each stage.
    std::vector<Index> strides{2, 2, 1};
    Index input_side = 64;
    Index feature_dim = 64;

    void validate() const {
        if (widths.empty() || widths.size() != blocks.size() || widths.size() != strides.size())
            throw ParamError("cnn config: widths, blocks and strides must be non-empty and of equal length");
        for (std::size_t i = 0; i < widths.size(); ++i)
            if (widths[i] <= 0 || blocks[i] <= 0 || strides[i] <= 0)
                throw ParamError("cnn config: extents must be positive");
        if (in_channels <= 0 || input_side <= 0) throw ParamError("cnn config: extents must be positive");
        if (feature_dim != widths.back()) throw ParamError("cnn config: feature_dim must equal the final stage width");
    }

    /// Spatial side of the last feature maps.
    Index last_map_side() const {
        Index s = input_side;
        for (Index st : strides) s = (s + 2 - 3) / st + 1;
        return s;
    }

    bool operator==(const ResidualCnnConfig&) const = default;

    /// Four stages ending at 2048 channels, like the pooled ResNet-50 descriptor.
    static ResidualCnnConfig wide_2048() {
        ResidualCnnConfig c;
        c.widths = {256, 512, 1024, 2048};
        c.blocks = {3, 4, 6, 3};
        c.strides = {1, 2, 2, 2};
        c.input_side = 384;
        c.feature_dim = 2048;
        return c;
    }
};

template <typename Scalar>
struct ResidualBlockParams {
    Tensor<Scalar> conv1_w, conv1_b, conv2_w, conv2_b;
    std::optional<Tensor<Scalar>> shortcut_w, shortcut_b;
};

/// relu(conv3x3(relu(conv3x3_s(x))) + shortcut(x)); the shortcut is the
/// identity when channels and stride are unchanged, else a strided 1×1 conv.
template <typename Scalar>
Tensor<Scalar> residual_block(const Tensor<Scalar>& x, const ResidualBlockParams<Scalar>& p, Index stride) {
    detail::require(x.rank() == 4, "residual_block: expected NCHW input, got " + shape_str(x.shape()));
    auto branch = relu(conv2d(x, p.conv1_w, p.conv1_b, stride, 1));
    branch = conv2d(branch, p.conv2_w, p.conv2_b, 1, 1);
    const Index out_channels = p.conv2_w.dim(0);
    Tensor<Scalar> shortcut;
    if (p.shortcut_w) {
        shortcut = conv2d(x, *p.shortcut_w, *p.shortcut_b, stride, 0);
    } else {
        detail::require(x.dim(1) == out_channels && stride == 1,
                        "residual_block: identity shortcut needs matching channels and stride 1, input " +
                            shape_str(x.shape()) + " vs conv " + shape_str(p.conv2_w.shape()));
        shortcut = x;
    }
    return relu(add(branch, shortcut));
}

template <typename Scalar>
struct CnnOutput {
    Tensor<Scalar> features;   // [N, feature_dim]
    Tensor<Scalar> logit;      // [N, 1]
    Tensor<Scalar> last_maps;  // [N, C, h, w]
};

template <typename Scalar>
class ResidualCnn {
public:
    ResidualCnn() = default;
    ResidualCnn(ResidualCnnConfig config, ParameterTable<Scalar> params)
        : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        check_parameters();
    }

    static ResidualCnn initialize(const ResidualCnnConfig& config, std::uint64_t seed) {
        config.validate();
        std::mt19937_64 rng(seed);
        ParameterTable<Scalar> t;
        for_each_block(config, [&](const std::string& prefix, Index in_c, Index out_c, bool projection) {
            t.add(prefix + ".conv1.w", he_uniform_init<Scalar>({out_c, in_c, 3, 3}, in_c * 9, rng));
            t.add(prefix + ".conv1.b", uniform_init<Scalar>({out_c}, in_c * 9, rng));
            t.add(prefix + ".conv2.w", he_uniform_init<Scalar>({out_c, out_c, 3, 3}, out_c * 9, rng));
            t.add(prefix + ".conv2.b", uniform_init<Scalar>({out_c}, out_c * 9, rng));
            if (projection) {
                t.add(prefix + ".shortcut.w", he_uniform_init<Scalar>({out_c, in_c, 1, 1}, in_c, rng));
                t.add(prefix + ".shortcut.b", uniform_init<Scalar>({out_c}, in_c, rng));
            }
        });
        t.add("cnn.head.w", uniform_init<Scalar>({config.feature_dim, 1}, config.feature_dim, rng));
        t.add("cnn.head.b", uniform_init<Scalar>({1}, config.feature_dim, rng));
        return ResidualCnn(config, std::move(t));
    }

    /// Expected name → shape table for a config.
    static std::vector<std::pair<std::string, Shape>> parameter_shapes(const ResidualCnnConfig& config) {
        std::vector<std::pair<std::string, Shape>> out;
        for_each_block(config, [&](const std::string& prefix, Index in_c, Index out_c, bool projection) {
            out.push_back({prefix + ".conv1.w", {out_c, in_c, 3, 3}});
            out.push_back({prefix + ".conv1.b", {out_c}});
            out.push_back({prefix + ".conv2.w", {out_c, out_c, 3, 3}});
            out.push_back({prefix + ".conv2.b", {out_c}});
            if (projection) {
                out.push_back({prefix + ".shortcut.w", {out_c, in_c, 1, 1}});
                out.push_back({prefix + ".shortcut.b", {out_c}});
            }
        });
        out.push_back({"cnn.head.w", {config.feature_dim, 1}});
        out.push_back({"cnn.head.b", {1}});
        return out;
    }

    CnnOutput<Scalar> forward(const Tensor<Scalar>& x) const {
        detail::require(x.rank() == 4, "cnn_forward: expected [N,3,S,S], got " + shape_str(x.shape()));
        detail::require(x.dim(1) == config_.in_channels,
                        "cnn_forward: expected " + std::to_string(config_.in_channels) + " channels, got " +
                            shape_str(x.shape()));
        detail::require(x.dim(2) == config_.input_side && x.dim(3) == config_.input_side,
                        "cnn_forward: expected side " + std::to_string(config_.input_side) + ", got " +
                            shape_str(x.shape()));
        Tensor<Scalar> h = x;
        for_each_block(config_, [&](const std::string& prefix, Index, Index, bool projection) {
            ResidualBlockParams<Scalar> p{params_.get(prefix + ".conv1.w"), params_.get(prefix + ".conv1.b"),
                                          params_.get(prefix + ".conv2.w"), params_.get(prefix + ".conv2.b"),
                                          std::nullopt, std::nullopt};
            if (projection) {
                p.shortcut_w = params_.get(prefix + ".shortcut.w");
                p.shortcut_b = params_.get(prefix + ".shortcut.b");
            }
            h = residual_block(h, p, block_stride(prefix));
        });
        CnnOutput<Scalar> out;
        out.last_maps = h;
        out.features = global_avg_pool(h);
        out.logit = affine(out.features, params_.get("cnn.head.w"), params_.get("cnn.head.b"));
        return out;
    }

    const ResidualCnnConfig& config() const { return config_; }
    const ParameterTable<Scalar>& parameters() const { return params_; }
    ParameterTable<Scalar>& parameters() { return params_; }

private:
    // Calls fn(prefix, in_channels, out_channels, needs_projection) per block.
    template <typename Fn>
    static void for_each_block(const ResidualCnnConfig& config, Fn&& fn) {
        Index in_c = config.in_channels;
        for (std::size_t s = 0; s < config.widths.size(); ++s)
            for (Index b = 0; b < config.blocks[s]; ++b) {
                const Index stride = b == 0 ? config.strides[s] : 1;
                const Index out_c = config.widths[s];
                fn("cnn.s" + std::to_string(s) + ".b" + std::to_string(b), in_c, out_c, in_c != out_c || stride != 1);
                in_c = out_c;
            }
    }

    Index block_stride(const std::string& prefix) const {
        // prefix is "cnn.s<stage>.b<block>"
        const auto dot = prefix.find(".b");
        const auto stage = static_cast<std::size_t>(std::stoul(prefix.substr(5, dot - 5)));
        const auto block = std::stol(prefix.substr(dot + 2));
        return block == 0 ? config_.strides[stage] : 1;
    }

    void check_parameters() const {
        for (const auto& [name, shape] : parameter_shapes(config_)) {
            if (!params_.contains(name)) throw ParamError("missing parameter " + name);
            if (params_.get(name).shape() != shape)
                throw ShapeError("parameter " + name + ": expected " + shape_str(shape) + ", got " +
                                 shape_str(params_.get(name).shape()));
        }
    }

    ResidualCnnConfig config_;
    ParameterTable<Scalar> params_;
};

}  // namespace cspine::nn
