#include "cspine/metrics/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "cspine/core/errors.hpp"

namespace cspine::metrics {

ConfusionMatrix confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truths) {
    if (preds.size() != truths.size())
        throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(truths.size()) + " truths");
    if (preds.empty()) throw ShapeError("confusion: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] != 0, t = truths[i] != 0;
        if (p && t) ++cm.tp;
        else if (!p && !t) ++cm.tn;
        else if (p) ++cm.fp;
        else ++cm.fn;
    }
    return cm;
}

const char* metric_name(Metric m) {
    static constexpr const char* names[] = {"TPR", "TNR", "PPV", "NPV", "F1", "Acc", "MCC", "AUC"};
    return names[static_cast<int>(m)];
}

namespace {
Stat ratio(double num, double den) { return den > 0 ? Stat(num / den) : std::nullopt; }
}  // namespace

BinaryMetrics binary_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DegenerateMatrix("all-zero confusion matrix");
    const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
    const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
    BinaryMetrics m;
    m.tpr = ratio(tp, tp + fn);
    m.tnr = ratio(tn, tn + fp);
    m.ppv = ratio(tp, tp + fp);
    m.npv = ratio(tn, tn + fn);
    if (m.ppv && m.tpr) m.f1 = ratio(2 * *m.ppv * *m.tpr, *m.ppv + *m.tpr);
    m.acc = ratio(tp + tn, tp + tn + fp + fn);
    m.mcc = ratio(tp * tn - fp * fn, std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)));
    return m;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> truths) {
    if (scores.size() != truths.size()) throw ShapeError("roc_auc: scores and truths differ in length");
    std::int64_t pos = 0, neg = 0;
    for (auto t : truths) (t ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw DegenerateTestSet("ROC needs both positive and negative truths");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::int64_t tp = 0, fp = 0;
    // Trapezoids over integer counts; one division at the end.
    double area2 = 0;  // twice the area, in units of (1/neg)(1/pos)
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::int64_t dtp = 0, dfp = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i) (truths[order[i]] ? dtp : dfp) += 1;
        area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.points.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
    }
    roc.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

std::string RocCurve::to_csv() const {
    std::ostringstream os;
    os << "threshold,fpr,tpr\n" << std::setprecision(17);
    for (const auto& p : points) os << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
    return os.str();
}

FoldMetrics evaluate(std::span<const double> scores, std::span<const std::uint8_t> truths, double threshold) {
    std::vector<std::uint8_t> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] > threshold ? 1 : 0;
    FoldMetrics f;
    f.cm = confusion(preds, truths);
    const auto b = binary_metrics(f.cm);
    f.values = {b.tpr, b.tnr, b.ppv, b.npv, b.f1, b.acc, b.mcc, std::nullopt};
    try {
        f.values[7] = roc_auc(scores, truths).auc;
    } catch (const DegenerateTestSet&) {
        f.values[7] = std::nullopt;
    }
    return f;
}

std::string AggregateCell::str() const {
    if (!mean_pct || !std_pct) return "undefined";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", *mean_pct, *std_pct);
    return buf;
}

AggregateRow aggregate_folds(std::span<const FoldMetrics> folds) {
    if (folds.size() < 2) throw ParamError("aggregation needs at least 2 folds");
    AggregateRow row;
    row.folds.assign(folds.begin(), folds.end());
    for (std::size_t m = 0; m < 8; ++m) {
        std::vector<double> xs;
        for (const auto& f : folds) {
            if (f.values[m]) xs.push_back(100.0 * *f.values[m]);
        }
        AggregateCell& cell = row.cells[m];
        cell.excluded = static_cast<int>(folds.size() - xs.size());
        if (xs.size() < 2) continue;
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double ss = 0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        cell.mean_pct = mean;
        cell.std_pct = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return row;
}

std::string render_table(const std::string& title, std::span<const ReportRow> rows) {
    std::size_t model_w = 5, data_w = 4, cell_w = 3;
    for (const auto& r : rows) {
        model_w = std::max(model_w, r.model.size());
        data_w = std::max(data_w, r.data.size());
        for (const auto& c : r.row.cells) cell_w = std::max(cell_w, c.str().size());
    }
    // "±" is two bytes in UTF-8 but one column wide.
    auto pad = [](const std::string& s, std::size_t w) {
        std::size_t cols = 0;
        for (unsigned char ch : s) cols += (ch & 0xC0) != 0x80;
        return s + std::string(w > cols ? w - cols : 0, ' ');
    };
    std::ostringstream os;
    os << title << '\n';
    os << pad("Model", model_w) << "  " << pad("Data", data_w);
    for (Metric m : kMetricOrder) os << "  " << pad(metric_name(m), cell_w);
    os << '\n';
    for (const auto& r : rows) {
        os << pad(r.model, model_w) << "  " << pad(r.data, data_w);
        for (const auto& c : r.row.cells) os << "  " << pad(c.str(), cell_w);
        os << '\n';
    }
    std::string out = os.str();
    // Trim trailing spaces per line.
    std::string trimmed;
    std::istringstream is(out);
    for (std::string line; std::getline(is, line);) {
        line.erase(line.find_last_not_of(' ') + 1);
        trimmed += line + '\n';
    }
    return trimmed;
}

std::string render_json(const std::string& title, std::span<const ReportRow> rows) {
    auto stat = [](const Stat& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["title"] = title;
    j["columns"] = nlohmann::json::array();
    for (Metric m : kMetricOrder) j["columns"].push_back(metric_name(m));
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row{{"model", r.model}, {"data", r.data}};
        nlohmann::json cells = nlohmann::json::object(), folds = nlohmann::json::array();
        for (Metric m : kMetricOrder) {
            const auto& c = r.row.cells[static_cast<std::size_t>(m)];
            cells[metric_name(m)] = {{"mean_pct", stat(c.mean_pct)},
                                     {"std_pct", stat(c.std_pct)},
                                     {"excluded_folds", c.excluded},
                                     {"text", c.str()}};
        }
        for (const auto& f : r.row.folds) {
            nlohmann::json fj{{"tp", f.cm.tp}, {"tn", f.cm.tn}, {"fp", f.cm.fp}, {"fn", f.cm.fn}};
            for (Metric m : kMetricOrder) fj[metric_name(m)] = stat(f.get(m));
            folds.push_back(fj);
        }
        row["metrics"] = cells;
        row["folds"] = folds;
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

}  // namespace cspine::metrics
