#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cspine/metrics/metrics.hpp"
#include "cspine/pipeline/pipeline.hpp"

namespace cspine::pipeline {

struct CvConfig {
    TrainConfig train = TrainConfig::desk();
    int folds = 7;
    std::vector<Index> hidden_units{128};
    std::uint64_t seed = 0;  // fold split, test-set sampling and per-fold training seeds
    bool gradcam = true;     // score heatmap localization on test slices
};

/// Heatmap argmax inside the dilated ground-truth box, over correctly
/// detected positive test slices.
struct LocalizationStats {
    Index hits = 0, total = 0;
    double rate() const { return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
};

inline constexpr Index kLocalizationDilation = 2;

/// Checks one slice: argmax of the upsampled heatmap against each box mapped
/// into the preprocessed frame and dilated.
bool heatmap_hit(const GradCam& cam, const preprocess::Provenance& prov, std::span<const BBox> boxes, Index side,
                 Index dilation = kLocalizationDilation);

struct FoldResult {
    int fold = 0;
    ImageTrainResult cnn;
    std::vector<CaseTrainResult> blstm;  // one per hidden-unit setting
    metrics::FoldMetrics image_imbalanced, image_balanced;
    std::vector<metrics::FoldMetrics> case_imbalanced, case_balanced;
    std::vector<std::vector<double>> case_test_scores;  // per hidden setting, imbalanced test order
    std::vector<std::uint8_t> case_test_truths;
    LocalizationStats localization;
};

struct CvResult {
    std::vector<FoldResult> folds;
    std::vector<metrics::ReportRow> image_rows, case_rows;
    LocalizationStats localization;

    std::string image_table() const;
    std::string case_table() const;
    std::string image_json() const;
    std::string case_json() const;
    /// fold,threshold,fpr,tpr rows for the imbalanced case-level test sets.
    std::string roc_csv(std::size_t hidden_index) const;

    /// Mean balanced case-level accuracy over folds, as a fraction.
    double mean_balanced_case_accuracy(std::size_t hidden_index) const;
};

inline const std::string kImageTableTitle = "Image-level classification (mean±std over folds, %)";
inline const std::string kCaseTableTitle = "Case-level classification (mean±std over folds, %)";

std::string case_model_name(Index hidden_units);

struct CvHooks {
    LogSink log;                                       // every epoch of every phase
    std::function<void(const FoldResult&)> on_fold;    // after a fold is evaluated
    std::function<void(const std::string&)> progress;  // human-readable status lines
};

/// Stratified K-fold protocol over in-memory volumes: train the CNN, then a
/// BLSTM per hidden-unit setting on frozen features, and evaluate both on
/// the imbalanced and balanced test sets of every fold.
CvResult run_cv(std::span<const data::HUVolume> volumes, const CvConfig& cfg, const CvHooks& hooks = {});

}  // namespace cspine::pipeline
