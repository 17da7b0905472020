#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cspine/nn/blstm_classifier.hpp"
#include "cspine/nn/residual_cnn.hpp"

namespace cspine::nn {

struct LstmDims {
    Index input_dim = 0;
    Index hidden_dim = 0;
    bool operator==(const LstmDims&) const = default;
};

struct TrainingMeta {
    int epoch = 0;
    std::uint64_t seed = 0;
    int fold = -1;
    bool operator==(const TrainingMeta&) const = default;
};

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
    bool operator==(const NamedTensor&) const = default;
};

/// Serialized model state. Either or both architecture parts may be present;
/// the tensor table must hold exactly the parameters they imply.
///
/// File layout (little-endian):
///   "CSPN" | u16 version | u32 tensor count | u32 n + n bytes JSON descriptor
///   per tensor: u16 n + UTF-8 name | u8 rank | u32 dims[rank] | f32 values
///   u32 CRC32 of every preceding byte
struct ModelCheckpoint {
    static constexpr std::uint16_t kVersion = 1;

    std::uint16_t version = kVersion;
    std::optional<ResidualCnnConfig> cnn;
    std::optional<LstmDims> lstm;
    std::vector<NamedTensor> tensors;
    TrainingMeta meta;

    bool operator==(const ModelCheckpoint&) const = default;

    /// Name → shape table implied by the architecture descriptor.
    std::vector<std::pair<std::string, Shape>> expected_shapes() const;

    /// Throws CorruptCheckpoint naming the first inconsistent tensor.
    void validate() const;

    template <typename Scalar>
    void add_parameters(const ParameterTable<Scalar>& table) {
        for (const auto& [name, t] : table.entries()) {
            NamedTensor nt{name, t.shape(), {}};
            nt.values.resize(static_cast<std::size_t>(t.numel()));
            for (Index i = 0; i < t.numel(); ++i) nt.values[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
            tensors.push_back(std::move(nt));
        }
    }

    template <typename Scalar>
    ParameterTable<Scalar> parameters(const std::string& prefix = "") const {
        ParameterTable<Scalar> out;
        for (const auto& nt : tensors) {
            if (nt.name.rfind(prefix, 0) != 0) continue;
            Vec<Scalar> v(static_cast<Index>(nt.values.size()));
            for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(nt.values[static_cast<std::size_t>(i)]);
            out.add(nt.name, Tensor<Scalar>(nt.shape, std::move(v), true));
        }
        return out;
    }

    template <typename Scalar>
    ResidualCnn<Scalar> cnn_model() const {
        if (!cnn) throw CorruptCheckpoint("checkpoint has no CNN architecture");
        return ResidualCnn<Scalar>(*cnn, parameters<Scalar>("cnn."));
    }

    template <typename Scalar>
    BlstmClassifier<Scalar> blstm_model() const {
        if (!lstm) throw CorruptCheckpoint("checkpoint has no BLSTM architecture");
        return BlstmClassifier<Scalar>(lstm->input_dim, lstm->hidden_dim, parameters<Scalar>("blstm."));
    }
};

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace cspine::nn
