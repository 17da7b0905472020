#include "cspine/pipeline/cross_validation.hpp"

#include <map>
#include <sstream>

#include "cspine/core/errors.hpp"

namespace cspine::pipeline {

namespace {

std::uint64_t fold_seed(std::uint64_t seed, std::uint64_t stream, int fold) {
    return seed ^ (0xD1B54A32D192ED03ULL * (stream * 64 + static_cast<std::uint64_t>(fold) + 1));
}

}  // namespace

std::string case_model_name(Index hidden_units) { return "CNN + BLSTM-" + std::to_string(hidden_units); }

bool heatmap_hit(const GradCam& cam, const preprocess::Provenance& prov, std::span<const BBox> boxes, Index side,
                 Index dilation) {
    for (const auto& b : boxes)
        if (prov.box_to_output(b, side).dilated(dilation).contains(static_cast<double>(cam.argmax_row),
                                                                  static_cast<double>(cam.argmax_col)))
            return true;
    return false;
}

std::string CvResult::image_table() const { return metrics::render_table(kImageTableTitle, image_rows); }
std::string CvResult::case_table() const { return metrics::render_table(kCaseTableTitle, case_rows); }
std::string CvResult::image_json() const { return metrics::render_json(kImageTableTitle, image_rows); }
std::string CvResult::case_json() const { return metrics::render_json(kCaseTableTitle, case_rows); }

std::string CvResult::roc_csv(std::size_t hidden_index) const {
    std::ostringstream os;
    os << "fold,threshold,fpr,tpr\n";
    for (const auto& f : folds) {
        const auto roc = metrics::roc_auc(f.case_test_scores.at(hidden_index), f.case_test_truths);
        std::istringstream rows(roc.to_csv());
        std::string line;
        std::getline(rows, line);  // header
        while (std::getline(rows, line)) os << f.fold << ',' << line << '\n';
    }
    return os.str();
}

double CvResult::mean_balanced_case_accuracy(std::size_t hidden_index) const {
    if (folds.empty()) return 0.0;
    double sum = 0;
    for (const auto& f : folds) sum += f.case_balanced.at(hidden_index).get(metrics::Metric::Acc).value_or(0.0);
    return sum / static_cast<double>(folds.size());
}

CvResult run_cv(std::span<const data::HUVolume> volumes, const CvConfig& cfg, const CvHooks& hooks) {
    cfg.train.validate();
    if (cfg.hidden_units.empty()) throw ConfigError("at least one hidden-unit setting is required");
    const Index side = cfg.train.cnn.input_side;
    auto say = [&](const std::string& s) {
        if (hooks.progress) hooks.progress(s);
    };

    std::map<std::string, std::size_t> index;
    std::vector<data::LabeledCase> labeled;
    std::vector<preprocess::PreprocessedCase> prepared;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        if (!index.emplace(volumes[i].case_id, i).second)
            throw ParamError("duplicate case id " + volumes[i].case_id);
        labeled.push_back({volumes[i].case_id, volumes[i].case_label});
        prepared.push_back(preprocess::preprocess_case(volumes[i], side));
    }
    say("preprocessed " + std::to_string(prepared.size()) + " cases");
    const auto plan = data::kfold_split(labeled, cfg.folds, cfg.seed);

    auto gather = [&](const std::vector<std::string>& ids) {
        std::vector<preprocess::PreprocessedCase> out;
        for (const auto& id : ids) out.push_back(prepared[index.at(id)]);
        return out;
    };

    CvResult result;
    std::vector<metrics::FoldMetrics> img_imb, img_bal;
    std::vector<std::vector<metrics::FoldMetrics>> case_imb(cfg.hidden_units.size()),
        case_bal(cfg.hidden_units.size());

    for (int f = 0; f < plan.k; ++f) {
        const auto& fold = plan.folds[static_cast<std::size_t>(f)];
        FoldResult fr;
        fr.fold = f;
        TrainConfig tc = cfg.train;
        tc.seed = fold_seed(cfg.seed, 1, f);

        const auto train = gather(fold.train), val = gather(fold.validation), test = gather(fold.test);
        fr.cnn = train_image_classifier(train, val, tc, hooks.log);
        say("fold " + std::to_string(f) + ": cnn best epoch " + std::to_string(fr.cnn.best_epoch) + ", val loss " +
            std::to_string(fr.cnn.best_val_loss));

        auto features_of = [&](const std::vector<preprocess::PreprocessedCase>& cs) {
            std::vector<CaseFeatures> out;
            for (const auto& c : cs) out.push_back(extract_features(fr.cnn.model, c));
            return out;
        };
        const auto f_train = features_of(train), f_val = features_of(val), f_test = features_of(test);

        // Image level: the CNN head on every test slice.
        std::vector<data::LabeledCase> images;
        std::map<std::string, std::pair<std::size_t, std::size_t>> image_at;
        for (std::size_t c = 0; c < test.size(); ++c)
            for (std::size_t n = 0; n < test[c].slices.size(); ++n) {
                std::string id = test[c].case_id + "#" + std::to_string(n);
                image_at[id] = {c, n};
                images.push_back({std::move(id), test[c].image_labels[n]});
            }
        const auto image_sets = data::build_test_sets(images, fold_seed(cfg.seed, 2, f));
        auto image_eval = [&](const std::vector<data::LabeledCase>& set) {
            std::vector<double> scores;
            std::vector<std::uint8_t> truths;
            for (const auto& im : set) {
                const auto [c, n] = image_at.at(im.case_id);
                scores.push_back(f_test[c].slice_scores[n]);
                truths.push_back(im.label);
            }
            return metrics::evaluate(scores, truths, cfg.train.threshold);
        };
        fr.image_imbalanced = image_eval(image_sets.imbalanced);
        fr.image_balanced = image_eval(image_sets.balanced);

        if (cfg.gradcam) {
            for (std::size_t c = 0; c < test.size(); ++c) {
                const auto& vol = volumes[index.at(test[c].case_id)];
                for (std::size_t n = 0; n < test[c].slices.size(); ++n) {
                    if (!test[c].image_labels[n] || !(f_test[c].slice_scores[n] > cfg.train.threshold)) continue;
                    const auto cam = grad_cam(fr.cnn.model, test[c].slices[n]);
                    ++fr.localization.total;
                    if (heatmap_hit(cam, test[c].slices[n].provenance, vol.fracture_boxes[n], side))
                        ++fr.localization.hits;
                }
            }
            result.localization.hits += fr.localization.hits;
            result.localization.total += fr.localization.total;
        }

        // Case level: one BLSTM per hidden-unit setting over the same frozen features.
        std::vector<data::LabeledCase> test_cases;
        for (const auto& c : f_test) test_cases.push_back({c.case_id, c.label});
        const auto case_sets = data::build_test_sets(test_cases, fold_seed(cfg.seed, 3, f));
        for (const auto& c : case_sets.imbalanced) fr.case_test_truths.push_back(c.label);
        for (std::size_t h = 0; h < cfg.hidden_units.size(); ++h) {
            TrainConfig hc = tc;
            hc.case_level.hidden_units = cfg.hidden_units[h];
            fr.blstm.push_back(train_case_classifier(f_train, f_val, hc, hooks.log));
            const auto scores = case_scores(fr.blstm.back().model, f_test);
            std::map<std::string, double> by_id;
            for (std::size_t i = 0; i < f_test.size(); ++i) by_id[f_test[i].case_id] = scores[i];
            auto case_eval = [&](const std::vector<data::LabeledCase>& set) {
                std::vector<double> s;
                std::vector<std::uint8_t> t;
                for (const auto& c : set) {
                    s.push_back(by_id.at(c.case_id));
                    t.push_back(c.label);
                }
                return metrics::evaluate(s, t, cfg.train.threshold);
            };
            fr.case_imbalanced.push_back(case_eval(case_sets.imbalanced));
            fr.case_balanced.push_back(case_eval(case_sets.balanced));
            std::vector<double> ordered;
            for (const auto& c : case_sets.imbalanced) ordered.push_back(by_id.at(c.case_id));
            fr.case_test_scores.push_back(std::move(ordered));
            case_imb[h].push_back(fr.case_imbalanced.back());
            case_bal[h].push_back(fr.case_balanced.back());
            say("fold " + std::to_string(f) + ": " + case_model_name(cfg.hidden_units[h]) + " balanced acc " +
                std::to_string(fr.case_balanced.back().get(metrics::Metric::Acc).value_or(0.0)));
        }
        img_imb.push_back(fr.image_imbalanced);
        img_bal.push_back(fr.image_balanced);
        if (hooks.on_fold) hooks.on_fold(fr);
        result.folds.push_back(std::move(fr));
    }

    result.image_rows.push_back({"CNN", "Imblcd.", metrics::aggregate_folds(img_imb)});
    result.image_rows.push_back({"CNN", "Blcd.", metrics::aggregate_folds(img_bal)});
    for (std::size_t h = 0; h < cfg.hidden_units.size(); ++h) {
        result.case_rows.push_back({case_model_name(cfg.hidden_units[h]), "Imblcd.", metrics::aggregate_folds(case_imb[h])});
        result.case_rows.push_back({case_model_name(cfg.hidden_units[h]), "Blcd.", metrics::aggregate_folds(case_bal[h])});
    }
    return result;
}

}  // namespace cspine::pipeline
