#include "cspine/cli/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "cspine/core/errors.hpp"
#include "cspine/io/binary.hpp"
#include "cspine/metrics/metrics.hpp"
#include "cspine/pipeline/cross_validation.hpp"

namespace fs = std::filesystem;

namespace cspine::cli {

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string join(const std::string& a, const std::string& b) { return (fs::path(a) / b).string(); }

std::string blstm_name(Index hidden) { return "blstm" + std::to_string(hidden) + ".ckpt"; }

nn::ModelCheckpoint cnn_checkpoint(const nn::ResidualCnn<float>& m, const nn::TrainingMeta& meta) {
    nn::ModelCheckpoint ck;
    ck.cnn = m.config();
    ck.add_parameters(m.parameters());
    ck.meta = meta;
    return ck;
}

nn::ModelCheckpoint blstm_checkpoint(const nn::BlstmClassifier<float>& m, const nn::TrainingMeta& meta) {
    nn::ModelCheckpoint ck;
    ck.lstm = nn::LstmDims{m.input_dim(), m.hidden_dim()};
    ck.add_parameters(m.parameters());
    ck.meta = meta;
    return ck;
}

class JsonLines {
public:
    explicit JsonLines(const std::string& path) : out_(path) {
        if (!out_) throw IoError("cannot write " + path);
    }
    void operator()(const pipeline::EpochLog& e) { out_ << e.to_json_line() << '\n'; }

private:
    std::ofstream out_;
};

// Splits of the configured fold, as preprocessed cases.
struct FoldData {
    std::vector<preprocess::PreprocessedCase> train, val, test;
    std::vector<const data::HUVolume*> test_volumes;
};

FoldData prepare_fold(const Dataset& ds, const RunConfig& cfg) {
    std::vector<data::LabeledCase> labeled;
    std::map<std::string, const data::HUVolume*> by_id;
    for (const auto& v : ds.volumes) {
        labeled.push_back({v.case_id, v.case_label});
        by_id[v.case_id] = &v;
    }
    const auto plan = data::kfold_split(labeled, cfg.folds, cfg.seed);
    const auto& fold = plan.folds[static_cast<std::size_t>(cfg.fold)];
    const Index side = cfg.train.cnn.input_side;
    FoldData fd;
    for (const auto& id : fold.train) fd.train.push_back(preprocess::preprocess_case(*by_id.at(id), side));
    for (const auto& id : fold.validation) fd.val.push_back(preprocess::preprocess_case(*by_id.at(id), side));
    for (const auto& id : fold.test) {
        fd.test.push_back(preprocess::preprocess_case(*by_id.at(id), side));
        fd.test_volumes.push_back(by_id.at(id));
    }
    return fd;
}

std::vector<pipeline::CaseFeatures> features_of(const nn::ResidualCnn<float>& cnn,
                                                const std::vector<preprocess::PreprocessedCase>& cases) {
    std::vector<pipeline::CaseFeatures> out;
    for (const auto& c : cases) out.push_back(pipeline::extract_features(cnn, c));
    return out;
}

std::string cnn_path(const RunConfig& cfg, const CommandArgs& args) {
    return args.cnn_checkpoint.empty() ? join(cfg.out_dir, "cnn.ckpt") : args.cnn_checkpoint;
}
std::string blstm_path(const RunConfig& cfg, const CommandArgs& args) {
    return args.blstm_checkpoint.empty() ? join(cfg.out_dir, blstm_name(cfg.hidden_units.front()))
                                         : args.blstm_checkpoint;
}

nlohmann::ordered_json fold_metrics_json(const metrics::FoldMetrics& f) {
    nlohmann::ordered_json j{{"tp", f.cm.tp}, {"tn", f.cm.tn}, {"fp", f.cm.fp}, {"fn", f.cm.fn}};
    for (auto m : metrics::kMetricOrder) {
        const auto v = f.get(m);
        j[metrics::metric_name(m)] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    }
    return j;
}

nlohmann::ordered_json box_json(const BBox& b) { return {b.r0, b.r1, b.c0, b.c1}; }

}  // namespace

data::Manifest generate_dataset(const RunConfig& cfg, const std::string& dir) {
    ensure_dir(dir);
    const auto n = cfg.data.cases;
    const auto n_pos = static_cast<Index>(std::lround(cfg.data.positive_fraction * static_cast<double>(n)));
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n), 0);
    std::fill(labels.begin(), labels.begin() + n_pos, 1);
    std::shuffle(labels.begin(), labels.end(), rng);
    data::Manifest m;
    for (Index i = 0; i < n; ++i) {
        const std::uint64_t case_seed = rng();
        char id[32];
        std::snprintf(id, sizeof id, "case_%04ld", static_cast<long>(i));
        auto v = data::generate_case(case_seed, labels[static_cast<std::size_t>(i)] != 0, cfg.data.slices,
                                     cfg.data.side);
        v.case_id = id;
        data::write_case(v, join(dir, data::case_filename(v.case_id)));
        m.entries.push_back(data::manifest_entry(v, case_seed));
    }
    data::write_manifest(m, join(dir, kManifestName));
    return m;
}

Dataset load_dataset(const std::string& dir) {
    const auto manifest_path = join(dir, kManifestName);
    if (!fs::exists(manifest_path)) throw IoError("no dataset manifest at " + manifest_path);
    Dataset ds;
    ds.manifest = data::read_manifest(manifest_path);
    for (const auto& e : ds.manifest.entries) {
        auto v = data::read_case(join(dir, data::case_filename(e.case_id)));
        if (v.num_slices() != e.num_slices || v.case_label != e.case_label)
            throw FormatError("case " + e.case_id + " does not match its manifest entry");
        v.demographics = e.demographics;
        ds.volumes.push_back(std::move(v));
    }
    return ds;
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
    ensure_dir(dir);
    write_text(join(dir, kConfigEchoName), cfg.to_toml());
}

void cmd_gen_data(const RunConfig& cfg, const std::string& target_dir, std::ostream& log) {
    echo_config(cfg, target_dir);
    const auto m = generate_dataset(cfg, target_dir);
    log << "wrote " << m.num_cases() << " cases (" << m.num_positive_cases() << " positive, " << m.num_slices()
        << " slices, " << m.num_positive_slices() << " positive slices) to " << target_dir << '\n';
    log << data::manifest_stats(m).table();
}

void cmd_preprocess(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
    echo_config(cfg, cfg.out_dir);
    const auto ds = load_dataset(cfg.data_dir);
    const auto root = join(cfg.out_dir, "preprocessed");
    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    bool found = args.case_id.empty();
    for (const auto& v : ds.volumes) {
        if (!args.case_id.empty() && v.case_id != args.case_id) continue;
        found = true;
        const auto pc = preprocess::preprocess_case(v, cfg.train.cnn.input_side);
        const auto dir = join(root, v.case_id);
        ensure_dir(dir);
        nlohmann::ordered_json slices = nlohmann::ordered_json::array();
        for (Index n = 0; n < pc.num_slices(); ++n) {
            if (args.slice && *args.slice != n) continue;
            const auto& s = pc.slices[static_cast<std::size_t>(n)];
            for (int c = 0; c < 3; ++c) {
                char name[64];
                std::snprintf(name, sizeof name, "slice_%03ld_%s.pgm", static_cast<long>(n),
                              preprocess::kWindows[static_cast<std::size_t>(c)].name.c_str());
                preprocess::write_pgm(join(dir, name), Image(s.channel(c)));
            }
            slices.push_back({{"slice", n}, {"cropped", s.provenance.cropped}, {"crop_box", box_json(s.provenance.crop_box)}});
        }
        summary.push_back({{"case_id", v.case_id}, {"uncropped_slices", pc.uncropped_slices()}, {"slices", slices}});
    }
    if (!found) throw NotFound("unknown case " + args.case_id);
    write_text(join(root, "preprocess.json"), summary.dump(2) + "\n");
    log << "preprocessed " << summary.size() << " case(s) into " << root << '\n';
}

void cmd_train_cnn(const RunConfig& cfg, std::ostream& log) {
    echo_config(cfg, cfg.out_dir);
    const auto ds = load_dataset(cfg.data_dir);
    const auto fd = prepare_fold(ds, cfg);
    pipeline::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    JsonLines jl(join(cfg.out_dir, "cnn_log.jsonl"));
    const auto r = pipeline::train_image_classifier(fd.train, fd.val, tc, [&](const pipeline::EpochLog& e) {
        jl(e);
        if (e.split == "val") log << "epoch " << e.epoch << " val loss " << e.loss << " acc " << e.accuracy << '\n';
    });
    nn::save_checkpoint(cnn_checkpoint(r.model, {r.best_epoch, cfg.seed, cfg.fold}), join(cfg.out_dir, "cnn.ckpt"));
    log << "best epoch " << r.best_epoch << ", validation loss " << r.best_val_loss << '\n';
}

void cmd_train_blstm(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
    echo_config(cfg, cfg.out_dir);
    const auto cnn = nn::load_checkpoint(cnn_path(cfg, args)).cnn_model<float>();
    const auto ds = load_dataset(cfg.data_dir);
    const auto fd = prepare_fold(ds, cfg);
    pipeline::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.case_level.hidden_units = cfg.hidden_units.front();
    JsonLines jl(join(cfg.out_dir, "blstm_log.jsonl"));
    const auto r = pipeline::train_case_classifier(features_of(cnn, fd.train), features_of(cnn, fd.val), tc,
                                                   [&](const pipeline::EpochLog& e) { jl(e); });
    nn::save_checkpoint(blstm_checkpoint(r.model, {r.best_epoch, cfg.seed, cfg.fold}),
                        join(cfg.out_dir, blstm_name(tc.case_level.hidden_units)));
    log << "best epoch " << r.best_epoch << ", validation loss " << r.best_val_loss << '\n';
}

void cmd_evaluate(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
    echo_config(cfg, cfg.out_dir);
    const auto cnn = nn::load_checkpoint(cnn_path(cfg, args)).cnn_model<float>();
    const auto blstm = nn::load_checkpoint(blstm_path(cfg, args)).blstm_model<float>();
    const auto ds = load_dataset(cfg.data_dir);
    const auto fd = prepare_fold(ds, cfg);
    const auto feats = features_of(cnn, fd.test);

    std::vector<double> img_scores, case_scores = pipeline::case_scores(blstm, feats);
    std::vector<std::uint8_t> img_truths, case_truths;
    for (std::size_t c = 0; c < feats.size(); ++c) {
        img_scores.insert(img_scores.end(), feats[c].slice_scores.begin(), feats[c].slice_scores.end());
        img_truths.insert(img_truths.end(), fd.test[c].image_labels.begin(), fd.test[c].image_labels.end());
        case_truths.push_back(feats[c].label);
    }
    const auto img = metrics::evaluate(img_scores, img_truths, cfg.train.threshold);
    const auto cas = metrics::evaluate(case_scores, case_truths, cfg.train.threshold);
    nlohmann::ordered_json j{{"fold", cfg.fold}, {"image_level", fold_metrics_json(img)},
                             {"case_level", fold_metrics_json(cas)}};
    nlohmann::ordered_json preds = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < feats.size(); ++c)
        preds.push_back({{"case_id", feats[c].case_id},
                         {"score", case_scores[c]},
                         {"label", case_scores[c] > cfg.train.threshold ? 1 : 0},
                         {"truth", feats[c].label}});
    j["predictions"] = preds;
    write_text(join(cfg.out_dir, "evaluation.json"), j.dump(2) + "\n");
    for (auto m : metrics::kMetricOrder) {
        const auto v = cas.get(m);
        log << metrics::metric_name(m) << ' ' << (v ? std::to_string(100 * *v) : std::string("undefined")) << '\n';
    }
}

void cmd_run_cv(const RunConfig& cfg, std::ostream& log) {
    echo_config(cfg, cfg.out_dir);
    const auto ds = load_dataset(cfg.data_dir);
    const auto reports = join(cfg.out_dir, "reports");
    const auto ckpts = join(cfg.out_dir, "checkpoints");
    const auto logs = join(cfg.out_dir, "logs");
    for (const auto& d : {reports, ckpts, logs}) ensure_dir(d);

    std::unique_ptr<JsonLines> jl;
    pipeline::CvHooks hooks;
    int current = 0;
    jl = std::make_unique<JsonLines>(join(logs, "fold0.jsonl"));
    hooks.log = [&](const pipeline::EpochLog& e) { (*jl)(e); };
    hooks.progress = [&](const std::string& s) { log << s << '\n'; };
    hooks.on_fold = [&](const pipeline::FoldResult& f) {
        const auto dir = join(ckpts, "fold" + std::to_string(f.fold));
        ensure_dir(dir);
        const std::uint64_t seed = cfg.seed;
        nn::save_checkpoint(cnn_checkpoint(f.cnn.model, {f.cnn.best_epoch, seed, f.fold}), join(dir, "cnn.ckpt"));
        for (std::size_t h = 0; h < f.blstm.size(); ++h)
            nn::save_checkpoint(blstm_checkpoint(f.blstm[h].model, {f.blstm[h].best_epoch, seed, f.fold}),
                                join(dir, blstm_name(cfg.hidden_units[h])));
        if (++current < cfg.folds) jl = std::make_unique<JsonLines>(join(logs, "fold" + std::to_string(current) + ".jsonl"));
    };
    const auto r = pipeline::run_cv(ds.volumes, cfg.cv(), hooks);

    write_text(join(reports, "image_level.txt"), r.image_table());
    write_text(join(reports, "image_level.json"), r.image_json());
    write_text(join(reports, "case_level.txt"), r.case_table());
    write_text(join(reports, "case_level.json"), r.case_json());
    for (std::size_t h = 0; h < cfg.hidden_units.size(); ++h)
        write_text(join(reports, "roc_blstm" + std::to_string(cfg.hidden_units[h]) + ".csv"), r.roc_csv(h));

    nlohmann::ordered_json summary;
    summary["gradcam_hits"] = r.localization.hits;
    summary["gradcam_slices"] = r.localization.total;
    summary["gradcam_hit_rate"] = r.localization.rate();
    nlohmann::ordered_json bal = nlohmann::ordered_json::object();
    for (std::size_t h = 0; h < cfg.hidden_units.size(); ++h)
        bal[pipeline::case_model_name(cfg.hidden_units[h])] = r.mean_balanced_case_accuracy(h);
    summary["mean_balanced_case_accuracy"] = bal;
    write_text(join(reports, "summary.json"), summary.dump(2) + "\n");

    log << '\n' << r.image_table() << '\n' << r.case_table();
    log << "gradcam localization: " << r.localization.hits << '/' << r.localization.total << '\n';
}

void cmd_gradcam(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
    if (args.case_id.empty()) throw ConfigError("gradcam needs --case");
    if (!args.slice) throw ConfigError("gradcam needs --slice");
    echo_config(cfg, cfg.out_dir);
    const auto cnn = nn::load_checkpoint(cnn_path(cfg, args)).cnn_model<float>();
    const auto ds = load_dataset(cfg.data_dir);
    ds.manifest.find(args.case_id);  // NotFound for unknown ids
    const data::HUVolume* vol = nullptr;
    for (const auto& v : ds.volumes)
        if (v.case_id == args.case_id) vol = &v;
    const Index n = *args.slice;
    if (n < 0 || n >= vol->num_slices())
        throw NotFound("case " + args.case_id + " has no slice " + std::to_string(n) + " (" +
                       std::to_string(vol->num_slices()) + " slices)");
    const auto slice = preprocess::preprocess_slice(vol->slices[static_cast<std::size_t>(n)], cnn.config().input_side);
    const auto cam = pipeline::grad_cam(cnn, slice);

    const auto dir = join(cfg.out_dir, "gradcam");
    ensure_dir(dir);
    char stem[96];
    std::snprintf(stem, sizeof stem, "%s_slice%03ld", args.case_id.c_str(), static_cast<long>(n));
    preprocess::write_pgm(join(dir, std::string(stem) + "_heatmap.pgm"), cam.upsampled);
    preprocess::write_pgm(join(dir, std::string(stem) + "_overlay.pgm"), cam.overlay);

    const auto& boxes = vol->fracture_boxes[static_cast<std::size_t>(n)];
    nlohmann::ordered_json gt = nlohmann::ordered_json::array(), mapped = nlohmann::ordered_json::array();
    for (const auto& b : boxes) {
        gt.push_back(box_json(b));
        mapped.push_back(box_json(slice.provenance.box_to_output(b, slice.side)));
    }
    nlohmann::ordered_json j{{"case_id", args.case_id},
                             {"slice", n},
                             {"image_label", vol->image_labels[static_cast<std::size_t>(n)]},
                             {"logit", cam.logit},
                             {"crop_box", box_json(slice.provenance.crop_box)},
                             {"argmax", {{"row", cam.argmax_row}, {"col", cam.argmax_col}}},
                             {"heatmap_side", cam.heatmap.rows()},
                             {"ground_truth_boxes", gt},
                             {"ground_truth_boxes_preprocessed", mapped}};
    if (!boxes.empty()) j["argmax_in_dilated_box"] = pipeline::heatmap_hit(cam, slice.provenance, boxes, slice.side);
    write_text(join(dir, std::string(stem) + ".json"), j.dump(2) + "\n");
    log << "wrote " << join(dir, stem) << "_{heatmap,overlay}.pgm and sidecar\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cervical spine fracture detection on CT: synthetic data, training, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, data_dir;
    std::optional<std::uint64_t> seed;
    std::optional<Index> side;
    std::vector<Index> hidden;
    std::optional<int> folds, fold;
    CommandArgs args;
    std::optional<Index> slice;
    app.add_option("--config", config_path, "TOML config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--side", side, "Preprocessed image side S");
    app.add_option("--hidden-units", hidden, "BLSTM hidden units (repeatable)");
    app.add_option("--folds", folds, "Number of cross-validation folds");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--data", data_dir, "Dataset directory (default $CSPINE_DATA_DIR or config)");

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and manifest");
    auto* pre = app.add_subcommand("preprocess", "Write preprocessed slices as PGM images");
    auto* tcnn = app.add_subcommand("train-cnn", "Phase 1: image-level CNN on one fold");
    auto* tblstm = app.add_subcommand("train-blstm", "Phase 2: case-level BLSTM over frozen CNN features");
    auto* cv = app.add_subcommand("run-cv", "Full cross-validation with aggregated reports");
    auto* eval = app.add_subcommand("evaluate", "Evaluate checkpoints on one fold's test cases");
    auto* cam = app.add_subcommand("gradcam", "Grad-CAM heatmap for one slice");
    for (auto* sc : {tcnn, tblstm, eval, pre, cam}) sc->add_option("--fold", fold, "Fold index");
    for (auto* sc : {tblstm, eval, cam}) sc->add_option("--cnn", args.cnn_checkpoint, "CNN checkpoint");
    eval->add_option("--blstm", args.blstm_checkpoint, "BLSTM checkpoint");
    for (auto* sc : {pre, cam}) {
        sc->add_option("--case", args.case_id, "Case id");
        sc->add_option("--slice", slice, "Slice index");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    args.slice = slice;

    try {
        RunConfig cfg;
        if (const char* env = std::getenv(kDataDirEnv); env && *env) cfg.data_dir = env;
        if (!config_path.empty()) cfg = load_config(config_path, cfg);
        if (seed) cfg.seed = *seed;
        if (side) cfg.train.cnn.input_side = *side;
        if (!hidden.empty()) cfg.hidden_units = hidden;
        if (folds) cfg.folds = *folds;
        if (fold) cfg.fold = *fold;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        cfg.validate();

        if (*gen) cmd_gen_data(cfg, out_dir.empty() ? cfg.data_dir : out_dir, out);
        else if (*pre) cmd_preprocess(cfg, args, out);
        else if (*tcnn) cmd_train_cnn(cfg, out);
        else if (*tblstm) cmd_train_blstm(cfg, args, out);
        else if (*cv) cmd_run_cv(cfg, out);
        else if (*eval) cmd_evaluate(cfg, args, out);
        else if (*cam) cmd_gradcam(cfg, args, out);
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        switch (e.error_class()) {
            case ErrorClass::Usage: return kExitUsage;
            case ErrorClass::Data: return kExitData;
            case ErrorClass::Runtime: return kExitRuntime;
        }
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace cspine::cli
