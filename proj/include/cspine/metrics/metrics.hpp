#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cspine::metrics {

struct ConfusionMatrix {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::int64_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Positive class = fracture (label 1).
ConfusionMatrix confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truths);

/// nullopt marks an undefined statistic (zero denominator).
using Stat = std::optional<double>;

/// Column order of the result tables.
enum class Metric { TPR, TNR, PPV, NPV, F1, Acc, MCC, AUC };
inline constexpr std::array<Metric, 8> kMetricOrder{Metric::TPR, Metric::TNR, Metric::PPV, Metric::NPV,
                                                    Metric::F1,  Metric::Acc, Metric::MCC, Metric::AUC};
const char* metric_name(Metric m);

/// Statistics as fractions (MCC in [−1,1], the rest in [0,1]).
struct BinaryMetrics {
    Stat tpr, tnr, ppv, npv, f1, acc, mcc;
};

/// Throws DegenerateMatrix for an all-zero matrix.
BinaryMetrics binary_metrics(const ConfusionMatrix& cm);

struct RocPoint {
    double threshold = 0;  // predict positive when score ≥ threshold
    double fpr = 0, tpr = 0;
};

struct RocCurve {
    double auc = 0;
    std::vector<RocPoint> points;  // from (0,0) to (1,1)

    std::string to_csv() const;
};

/// ROC over distinct score thresholds; AUC by the trapezoid rule.
/// Throws DegenerateTestSet unless both classes are present.
RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> truths);

/// All eight statistics of one evaluation, as fractions.
struct FoldMetrics {
    ConfusionMatrix cm;
    std::array<Stat, 8> values{};  // indexed like kMetricOrder

    Stat get(Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

FoldMetrics evaluate(std::span<const double> scores, std::span<const std::uint8_t> truths, double threshold = 0.5);

struct AggregateCell {
    Stat mean_pct, std_pct;  // nullopt when fewer than 2 defined folds
    int excluded = 0;        // folds where the statistic was undefined

    /// "75.00±7.07", or "undefined".
    std::string str() const;
};

struct AggregateRow {
    std::array<AggregateCell, 8> cells;
    std::vector<FoldMetrics> folds;
};

/// Per-metric mean and sample std (divisor K−1) in percent over folds.
AggregateRow aggregate_folds(std::span<const FoldMetrics> folds);

struct ReportRow {
    std::string model;  // e.g. "CNN" or "CNN + BLSTM-128"
    std::string data;   // "Imblcd." or "Blcd."
    AggregateRow row;
};

/// Aligned plain-text table: Model | Data | TPR … AUC.
std::string render_table(const std::string& title, std::span<const ReportRow> rows);
/// JSON document with aggregate cells and per-fold values.
std::string render_json(const std::string& title, std::span<const ReportRow> rows);

}  // namespace cspine::metrics
