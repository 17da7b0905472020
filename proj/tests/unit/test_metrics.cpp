#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cspine/core/errors.hpp"
#include "cspine/data/dataset.hpp"
#include "cspine/metrics/metrics.hpp"
#include "support/oracles.hpp"
#include "support/report_fixture.hpp"

using namespace cspine;
using namespace cspine::metrics;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Confusion, IdentityAndNegation) {
    std::vector<std::uint8_t> t{1, 0, 1, 1, 0};
    EXPECT_EQ(confusion(t, t), (ConfusionMatrix{3, 2, 0, 0}));
    std::vector<std::uint8_t> n{0, 1, 0, 0, 1};
    auto cm = confusion(n, t);
    EXPECT_EQ(cm.tp, 0);
    EXPECT_EQ(cm.tn, 0);
    EXPECT_THROW(confusion(t, std::vector<std::uint8_t>{1, 0}), ShapeError);
}

TEST(Confusion, MatchesEnumeration) {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::uint8_t> p(50), t(50);
        ConfusionMatrix want;
        for (int i = 0; i < 50; ++i) {
            p[i] = coin(rng);
            t[i] = coin(rng);
            if (p[i] && t[i]) ++want.tp;
            if (!p[i] && !t[i]) ++want.tn;
            if (p[i] && !t[i]) ++want.fp;
            if (!p[i] && t[i]) ++want.fn;
        }
        EXPECT_EQ(confusion(p, t), want);
    }
}

TEST(BinaryMetrics, Perfect) {
    auto m = binary_metrics({10, 10, 0, 0});
    for (const auto& s : {m.tpr, m.tnr, m.ppv, m.npv, m.f1, m.acc, m.mcc}) EXPECT_DOUBLE_EQ(*s, 1.0);
}

TEST(BinaryMetrics, Chance) {
    auto m = binary_metrics({5, 5, 5, 5});
    EXPECT_DOUBLE_EQ(*m.acc, 0.5);
    EXPECT_DOUBLE_EQ(*m.mcc, 0.0);
}

TEST(BinaryMetrics, HandValues) {
    auto m = binary_metrics({6, 3, 1, 2});
    EXPECT_NEAR(*m.ppv, 6.0 / 7.0, 1e-12);
    EXPECT_NEAR(*m.tpr, 0.75, 1e-12);
    EXPECT_NEAR(*m.f1, 0.8, 1e-12);
    EXPECT_NEAR(*m.mcc, 16.0 / std::sqrt(1120.0), 1e-12);
    EXPECT_NEAR(*m.mcc, 0.4781, 1e-4);
    EXPECT_NEAR(*m.npv, 0.6, 1e-12);
    EXPECT_NEAR(*m.tnr, 0.75, 1e-12);
}

TEST(BinaryMetrics, UndefinedIsNotZero) {
    auto m = binary_metrics({0, 5, 0, 3});  // nothing predicted positive
    EXPECT_FALSE(m.ppv.has_value());
    EXPECT_FALSE(m.mcc.has_value());
    EXPECT_FALSE(m.f1.has_value());
    EXPECT_DOUBLE_EQ(*m.tpr, 0.0);
    EXPECT_THROW(binary_metrics({0, 0, 0, 0}), DegenerateMatrix);
}

TEST(BinaryMetrics, MccClassSwapSymmetryProperty) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> d(0, 40);
    for (int trial = 0; trial < 500; ++trial) {
        ConfusionMatrix cm{d(rng), d(rng), d(rng), d(rng)};
        if (cm.total() == 0) continue;
        auto a = binary_metrics(cm), b = binary_metrics({cm.tn, cm.tp, cm.fn, cm.fp});
        ASSERT_EQ(a.mcc.has_value(), b.mcc.has_value());
        if (a.mcc) EXPECT_NEAR(*a.mcc, *b.mcc, 1e-15);
    }
}

TEST(BinaryMetrics, RangesProperty) {
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> d(0, 30);
    for (int trial = 0; trial < 500; ++trial) {
        ConfusionMatrix cm{d(rng), d(rng), d(rng), d(rng)};
        if (cm.total() == 0) continue;
        auto m = binary_metrics(cm);
        for (const auto& s : {m.tpr, m.tnr, m.ppv, m.npv, m.f1, m.acc})
            if (s) {
                EXPECT_GE(*s, 0.0);
                EXPECT_LE(*s, 1.0);
            }
        if (m.mcc) {
            EXPECT_GE(*m.mcc, -1.0 - 1e-12);
            EXPECT_LE(*m.mcc, 1.0 + 1e-12);
        }
    }
}

TEST(BinaryMetrics, BalancedAccuracyIsMeanOfRates) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> d(1, 50);
    for (int trial = 0; trial < 200; ++trial) {
        const int p = d(rng);
        std::uniform_int_distribution<int> k(0, p);
        const int tp = k(rng), tn = k(rng);
        auto m = binary_metrics({tp, tn, p - tn, p - tp});
        EXPECT_NEAR(*m.acc, 0.5 * (*m.tpr + *m.tnr), 1e-15);
    }
}

TEST(Roc, ReferenceCases) {
    std::vector<std::uint8_t> t{1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, t).auc, 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, t).auc, 0.5);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.8, 0.4, 0.6, 0.2}, t).auc, 0.75);
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}), DegenerateTestSet);
}

TEST(Roc, CurveEndpointsAndMonotone) {
    auto r = roc_auc(std::vector<double>{0.3, 0.9, 0.1, 0.5, 0.5}, std::vector<std::uint8_t>{0, 1, 0, 1, 0});
    ASSERT_GE(r.points.size(), 2u);
    EXPECT_EQ(r.points.front().fpr, 0.0);
    EXPECT_EQ(r.points.front().tpr, 0.0);
    EXPECT_EQ(r.points.back().fpr, 1.0);
    EXPECT_EQ(r.points.back().tpr, 1.0);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
        EXPECT_GE(r.points[i].fpr, r.points[i - 1].fpr);
        EXPECT_GE(r.points[i].tpr, r.points[i - 1].tpr);
    }
    EXPECT_EQ(r.to_csv().substr(0, r.to_csv().find('\n')), "threshold,fpr,tpr");
}

TEST(Roc, TrapezoidEqualsPairwiseOracle) {
    std::mt19937_64 rng(12);
    std::bernoulli_distribution coin(0.4);
    std::uniform_int_distribution<int> len(2, 60), level(0, 9);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<std::uint8_t> t(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            // coarse levels force plenty of ties
            s[static_cast<std::size_t>(i)] = trial % 2 ? level(rng) / 9.0 : std::uniform_real_distribution<double>()(rng);
            t[static_cast<std::size_t>(i)] = coin(rng);
        }
        t[0] = 1;
        t[1] = 0;
        EXPECT_NEAR(roc_auc(s, t).auc, oracle::pairwise_auc(s, t), 1e-12) << trial;
    }
}

TEST(Aggregate, HandComputedMeanStd) {
    // Acc 70% and 80%: TP+TN = 7 of 10 and 8 of 10.
    std::vector<FoldMetrics> folds{evaluate(std::vector<double>{0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.9},
                                            std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0}),
                                   evaluate(std::vector<double>{0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.9, 0.9},
                                            std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0})};
    auto row = aggregate_folds(folds);
    const auto& acc = row.cells[static_cast<std::size_t>(Metric::Acc)];
    EXPECT_NEAR(*acc.mean_pct, 75.0, 1e-9);
    EXPECT_NEAR(*acc.std_pct, std::sqrt(50.0), 1e-9);
    EXPECT_EQ(acc.str(), "75.00±7.07");
    const auto& tpr = row.cells[static_cast<std::size_t>(Metric::TPR)];
    EXPECT_EQ(tpr.str(), "100.00±0.00");
}

TEST(Aggregate, UndefinedFoldsExcluded) {
    std::vector<FoldMetrics> folds{
        evaluate(std::vector<double>{0.1, 0.1, 0.1}, std::vector<std::uint8_t>{1, 0, 0}),  // PPV undefined
        evaluate(std::vector<double>{0.9, 0.1, 0.9}, std::vector<std::uint8_t>{1, 0, 0}),
        evaluate(std::vector<double>{0.9, 0.9, 0.1}, std::vector<std::uint8_t>{1, 0, 0}),
    };
    auto row = aggregate_folds(folds);
    const auto& ppv = row.cells[static_cast<std::size_t>(Metric::PPV)];
    EXPECT_EQ(ppv.excluded, 1);
    EXPECT_EQ(ppv.str(), "50.00±0.00");
    std::vector<FoldMetrics> two{folds[0], folds[0]};
    EXPECT_EQ(aggregate_folds(two).cells[static_cast<std::size_t>(Metric::PPV)].str(), "undefined");
}

TEST(Aggregate, TprIdenticalAcrossBalancedAndImbalancedSets) {
    std::mt19937_64 rng(13);
    std::vector<FoldMetrics> imb, bal;
    for (int f = 0; f < 7; ++f) {
        std::vector<data::LabeledCase> cases;
        std::map<std::string, double> score;
        for (int i = 0; i < 20; ++i) {
            const std::string id = "c" + std::to_string(f) + "_" + std::to_string(i);
            cases.push_back({id, static_cast<std::uint8_t>(i < 6)});
            score[id] = std::uniform_real_distribution<double>()(rng);
        }
        auto ts = data::build_test_sets(cases, rng());
        auto eval = [&](const std::vector<data::LabeledCase>& set) {
            std::vector<double> s;
            std::vector<std::uint8_t> t;
            for (const auto& c : set) {
                s.push_back(score[c.case_id]);
                t.push_back(c.label);
            }
            return evaluate(s, t);
        };
        imb.push_back(eval(ts.imbalanced));
        bal.push_back(eval(ts.balanced));
    }
    const auto a = aggregate_folds(imb), b = aggregate_folds(bal);
    const auto i = static_cast<std::size_t>(Metric::TPR);
    EXPECT_EQ(a.cells[i].str(), b.cells[i].str());
    EXPECT_EQ(*a.cells[i].mean_pct, *b.cells[i].mean_pct);
    EXPECT_EQ(*a.cells[i].std_pct, *b.cells[i].std_pct);
}

TEST(Report, ColumnOrder) {
    std::vector<std::string> names;
    for (Metric m : kMetricOrder) names.push_back(metric_name(m));
    EXPECT_EQ(names, (std::vector<std::string>{"TPR", "TNR", "PPV", "NPV", "F1", "Acc", "MCC", "AUC"}));
}

TEST(Report, TableMatchesGoldenFile) {
    const auto rows = fixture::report_rows();
    const auto got = render_table(fixture::kTitle, rows);
    const auto want = slurp(std::string(CSPINE_TEST_DIR) + "/golden/case_level_table.txt");
    EXPECT_EQ(got, want) << got;
}

TEST(Report, JsonCarriesCellsAndFolds) {
    const auto rows = fixture::report_rows();
    const auto j = render_json(fixture::kTitle, rows);
    EXPECT_NE(j.find("\"columns\""), std::string::npos);
    EXPECT_NE(j.find("\"excluded_folds\": 1"), std::string::npos);
    EXPECT_EQ(j, render_json(fixture::kTitle, rows));
}
