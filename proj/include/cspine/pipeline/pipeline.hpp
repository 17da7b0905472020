#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cspine/data/dataset.hpp"
#include "cspine/nn/adam.hpp"
#include "cspine/nn/blstm_classifier.hpp"
#include "cspine/nn/checkpoint.hpp"
#include "cspine/nn/residual_cnn.hpp"
#include "cspine/preprocess/preprocess.hpp"

namespace cspine::pipeline {

/// Image-level CNN training (phase 1).
struct ImagePhaseConfig {
    nn::AdamOptions adam{1e-3, 0.9, 0.999, 1e-8, 5, 0.2};
    int batch_size = 16;
    int epochs = 50;
    int patience = 10;
    // Per epoch: all positive images plus this many negatives per positive
    // (without replacement). 0 uses every image every epoch.
    int negatives_per_positive = 0;
    bool augment = true;
};

/// Case-level BLSTM training over frozen CNN features (phase 2).
struct CasePhaseConfig {
    nn::AdamOptions adam{1e-6, 0.9, 0.999, 1e-8, 1000000, 1.0};
    int batch_size = 4;
    int epochs = 100;
    int patience = 15;
    Index hidden_units = 128;
    double dropout = 0.2;
};

struct TrainConfig {
    nn::ResidualCnnConfig cnn;
    ImagePhaseConfig image;
    CasePhaseConfig case_level;
    std::uint64_t seed = 0;
    double threshold = 0.5;

    /// Full-scale model settings (2048-wide features, 384 px).
    static TrainConfig full_scale();
    /// Defaults sized for CPU runs on synthetic data.
    static TrainConfig desk();

    void validate() const;
};

struct EpochLog {
    std::string phase;  // "cnn" or "blstm"
    int epoch = 0;
    std::string split;  // "train" or "val"
    double loss = 0;
    double accuracy = 0;
    double lr = 0;

    std::string to_json_line() const;
};

using LogSink = std::function<void(const EpochLog&)>;

template <typename Scalar>
nn::ParameterTable<Scalar> deep_copy(const nn::ParameterTable<Scalar>& t, bool requires_grad) {
    nn::ParameterTable<Scalar> out;
    for (const auto& [name, p] : t.entries()) out.add(name, Tensor<Scalar>(p.shape(), p.data(), requires_grad));
    return out;
}

/// A copy of the model whose parameters do not record gradients.
nn::ResidualCnn<float> inference_copy(const nn::ResidualCnn<float>& m);
nn::BlstmClassifier<float> inference_copy(const nn::BlstmClassifier<float>& m);

/// Packs slices into a [B,3,S,S] tensor.
Tensor<float> batch_tensor(std::span<const preprocess::PreprocessedSlice* const> slices);

struct ImageTrainResult {
    nn::ResidualCnn<float> model;  // best validation checkpoint
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_loss = 0;
    double final_val_loss = 0;
};

ImageTrainResult train_image_classifier(std::span<const preprocess::PreprocessedCase> train,
                                        std::span<const preprocess::PreprocessedCase> val, const TrainConfig& cfg,
                                        const LogSink& sink = {});

/// Per-slice pooled features and image-level head scores of one case.
struct CaseFeatures {
    std::string case_id;
    std::uint8_t label = 0;
    RowMatrix<float> features;        // N × feature_dim, cranio-caudal order
    std::vector<double> slice_scores;  // sigmoid of the image head
};

CaseFeatures extract_features(const nn::ResidualCnn<float>& cnn, const preprocess::PreprocessedCase& c);

struct CaseTrainResult {
    nn::BlstmClassifier<float> model;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_loss = 0;
};

CaseTrainResult train_case_classifier(std::span<const CaseFeatures> train, std::span<const CaseFeatures> val,
                                      const TrainConfig& cfg, const LogSink& sink = {});

/// Case scores for a batch of feature sequences (inference mode).
std::vector<double> case_scores(const nn::BlstmClassifier<float>& blstm, std::span<const CaseFeatures> cases);

struct CasePrediction {
    std::string case_id;
    double score = 0;
    std::uint8_t label = 0;
    std::vector<double> slice_scores;
};

CasePrediction infer_case(const nn::ResidualCnn<float>& cnn, const nn::BlstmClassifier<float>& blstm,
                          const data::HUVolume& volume, double threshold = 0.5);
CasePrediction infer_case(const nn::ModelCheckpoint& cnn, const nn::ModelCheckpoint& blstm,
                          const data::HUVolume& volume, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Grad-CAM

/// relu(Σ_k α_k A_k) with α_k the spatial mean of ∂logit/∂A_k.
/// maps and grads are [C, h·w] row-major.
Image class_activation(const RowMatrix<double>& maps, const RowMatrix<double>& grads, Index h, Index w);

/// Min-max scaling to [0,1]; a constant map becomes all 0 (or all 1 if positive).
Image normalize_heatmap(const Image& raw);

struct GradCam {
    double logit = 0;
    Image heatmap;    // h × w of the last feature maps, normalized
    Image upsampled;  // S × S, bilinear
    Image overlay;    // S × S blend of heatmap and the gross-bone channel
    Index argmax_row = 0, argmax_col = 0;  // in the S × S frame
};

GradCam grad_cam(const nn::ResidualCnn<float>& cnn, const preprocess::PreprocessedSlice& slice);

}  // namespace cspine::pipeline
