#include "cspine/pipeline/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "cspine/core/errors.hpp"

namespace cspine::pipeline {

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.cnn = nn::ResidualCnnConfig::wide_2048();
    c.image = ImagePhaseConfig{};
    c.case_level = CasePhaseConfig{};
    return c;
}

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    // Small residual CNNs without normalization sit on a loss plateau for
    // 10-30 epochs before the fracture feature appears; patience must cover it.
    c.image.adam = {2e-3, 0.9, 0.999, 1e-8, 1000, 1.0};
    c.image.batch_size = 8;
    c.image.epochs = 80;
    c.image.patience = 40;
    c.image.negatives_per_positive = 1;
    c.case_level.adam.learning_rate = 1e-3;
    c.case_level.epochs = 60;
    return c;
}

void TrainConfig::validate() const {
    cnn.validate();
    auto check_adam = [](const nn::AdamOptions& o, const char* what) {
        if (!(o.learning_rate > 0)) throw ConfigError(std::string(what) + ": learning rate must be positive");
        if (!(o.gamma > 0 && o.gamma <= 1)) throw ConfigError(std::string(what) + ": gamma must lie in (0,1]");
        if (o.decay_period < 1) throw ConfigError(std::string(what) + ": decay period must be >= 1");
    };
    check_adam(image.adam, "cnn");
    check_adam(case_level.adam, "blstm");
    if (image.batch_size < 1 || case_level.batch_size < 1) throw ConfigError("batch sizes must be >= 1");
    if (image.epochs < 1 || case_level.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (image.patience < 1 || case_level.patience < 1) throw ConfigError("patience must be >= 1");
    if (image.negatives_per_positive < 0) throw ConfigError("negatives_per_positive must be >= 0");
    if (case_level.hidden_units < 1) throw ConfigError("hidden units must be >= 1");
    if (!(case_level.dropout >= 0 && case_level.dropout < 1)) throw ConfigError("dropout must lie in [0,1)");
    if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must lie in [0,1]");
}

std::string EpochLog::to_json_line() const {
    nlohmann::ordered_json j{{"phase", phase}, {"epoch", epoch}, {"split", split},
                             {"loss", loss},   {"accuracy", accuracy}, {"lr", lr}};
    return j.dump();
}

nn::ResidualCnn<float> inference_copy(const nn::ResidualCnn<float>& m) {
    return nn::ResidualCnn<float>(m.config(), deep_copy(m.parameters(), false));
}

nn::BlstmClassifier<float> inference_copy(const nn::BlstmClassifier<float>& m) {
    return nn::BlstmClassifier<float>(m.input_dim(), m.hidden_dim(), deep_copy(m.parameters(), false));
}

Tensor<float> batch_tensor(std::span<const preprocess::PreprocessedSlice* const> slices) {
    if (slices.empty()) throw ShapeError("batch_tensor: empty batch");
    const Index side = slices.front()->side;
    const Index per = 3 * side * side;
    Vec<float> v(static_cast<Index>(slices.size()) * per);
    for (std::size_t b = 0; b < slices.size(); ++b) {
        if (slices[b]->side != side) throw ShapeError("batch_tensor: slices of different sides");
        std::copy(slices[b]->values.begin(), slices[b]->values.end(), v.data() + static_cast<Index>(b) * per);
    }
    return Tensor<float>({static_cast<Index>(slices.size()), 3, side, side}, std::move(v));
}

namespace {

struct ImageItem {
    const preprocess::PreprocessedSlice* slice;
    std::uint8_t label;
};

double clamped_bce(double p, double y) {
    const double pc = std::clamp(p, nn::kBceClamp, 1.0 - nn::kBceClamp);
    return -(y * std::log(pc) + (1 - y) * std::log(1 - pc));
}

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct SplitStats {
    double loss = 0, accuracy = 0;
};

SplitStats score_stats(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    SplitStats s;
    if (scores.empty()) return s;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        s.loss += clamped_bce(scores[i], labels[i]);
        s.accuracy += ((scores[i] > 0.5) == (labels[i] != 0)) ? 1.0 : 0.0;
    }
    s.loss /= static_cast<double>(scores.size());
    s.accuracy /= static_cast<double>(scores.size());
    return s;
}

constexpr Index kInferenceBatch = 32;

// Sigmoid of the image head for each item, inference mode.
std::vector<double> image_scores(const nn::ResidualCnn<float>& frozen, std::span<const ImageItem> items) {
    std::vector<double> out;
    out.reserve(items.size());
    std::vector<const preprocess::PreprocessedSlice*> batch;
    for (std::size_t i = 0; i < items.size(); i += kInferenceBatch) {
        batch.clear();
        for (std::size_t j = i; j < std::min(items.size(), i + kInferenceBatch); ++j) batch.push_back(items[j].slice);
        const auto logit = frozen.forward(batch_tensor(batch)).logit;
        for (Index b = 0; b < logit.numel(); ++b) out.push_back(sigmoid_d(logit[b]));
    }
    return out;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    return seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
}

Tensor<float> label_tensor(std::span<const std::uint8_t> labels) {
    Vec<float> v(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) v[static_cast<Index>(i)] = labels[i];
    return Tensor<float>({static_cast<Index>(labels.size()), 1}, std::move(v));
}

}  // namespace

ImageTrainResult train_image_classifier(std::span<const preprocess::PreprocessedCase> train,
                                        std::span<const preprocess::PreprocessedCase> val, const TrainConfig& cfg,
                                        const LogSink& sink) {
    cfg.validate();
    std::vector<ImageItem> pos, neg, val_items;
    for (const auto& c : train)
        for (std::size_t n = 0; n < c.slices.size(); ++n) {
            if (c.slices[n].side != cfg.cnn.input_side)
                throw ShapeError("case " + c.case_id + ": slice side " + std::to_string(c.slices[n].side) +
                                 " does not match CNN input side " + std::to_string(cfg.cnn.input_side));
            (c.image_labels[n] ? pos : neg).push_back({&c.slices[n], c.image_labels[n]});
        }
    if (pos.empty() || neg.empty())
        throw DegenerateTraining("image training set needs both classes (" + std::to_string(pos.size()) +
                                 " positive, " + std::to_string(neg.size()) + " negative images)");
    for (const auto& c : val)
        for (std::size_t n = 0; n < c.slices.size(); ++n) val_items.push_back({&c.slices[n], c.image_labels[n]});
    std::vector<std::uint8_t> val_labels;
    for (const auto& it : val_items) val_labels.push_back(it.label);

    ImageTrainResult result;
    auto model = nn::ResidualCnn<float>::initialize(cfg.cnn, stream_seed(cfg.seed, 0));
    nn::Adam<float> opt(model.parameters().tensors(), cfg.image.adam);
    std::mt19937_64 rng(stream_seed(cfg.seed, 1));
    result.model = inference_copy(model);

    const std::size_t n_neg =
        cfg.image.negatives_per_positive > 0
            ? std::min(neg.size(), pos.size() * static_cast<std::size_t>(cfg.image.negatives_per_positive))
            : neg.size();
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<ImageItem> items;
    std::vector<preprocess::PreprocessedSlice> augmented;
    std::vector<const preprocess::PreprocessedSlice*> ptrs;
    std::vector<std::uint8_t> labels;
    for (int epoch = 0; epoch < cfg.image.epochs; ++epoch) {
        items = pos;
        if (n_neg < neg.size()) std::shuffle(neg.begin(), neg.end(), rng);
        items.insert(items.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
        std::shuffle(items.begin(), items.end(), rng);

        double loss_sum = 0, correct = 0;
        const auto bs = static_cast<std::size_t>(cfg.image.batch_size);
        for (std::size_t i = 0; i < items.size(); i += bs) {
            const std::size_t end = std::min(items.size(), i + bs);
            augmented.clear();
            ptrs.clear();
            labels.clear();
            for (std::size_t j = i; j < end; ++j) {
                if (cfg.image.augment) augmented.push_back(preprocess::augment(*items[j].slice, rng));
                labels.push_back(items[j].label);
            }
            for (std::size_t j = i; j < end; ++j)
                ptrs.push_back(cfg.image.augment ? &augmented[j - i] : items[j].slice);
            const auto out = model.forward(batch_tensor(ptrs));
            const auto p = sigmoid(out.logit);
            const auto loss = nn::bce_loss(p, label_tensor(labels));
            loss.backward();
            opt.step(epoch);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - i);
            for (std::size_t j = 0; j < labels.size(); ++j)
                correct += ((p[static_cast<Index>(j)] > 0.5f) == (labels[j] != 0)) ? 1.0 : 0.0;
        }
        const double lr = nn::step_decay_lr(cfg.image.adam, epoch);
        EpochLog tl{"cnn", epoch, "train", loss_sum / static_cast<double>(items.size()),
                    correct / static_cast<double>(items.size()), lr};
        result.log.push_back(tl);
        if (sink) sink(tl);

        double monitored = tl.loss;
        if (!val_items.empty()) {
            const auto frozen = inference_copy(model);
            const auto scores = image_scores(frozen, val_items);
            const auto st = score_stats(scores, val_labels);
            EpochLog vl{"cnn", epoch, "val", st.loss, st.accuracy, lr};
            result.log.push_back(vl);
            if (sink) sink(vl);
            monitored = st.loss;
        }
        result.final_val_loss = monitored;
        if (monitored < best) {
            best = monitored;
            since_best = 0;
            result.best_epoch = epoch;
            result.best_val_loss = monitored;
            result.model = inference_copy(model);
        } else if (++since_best >= cfg.image.patience) {
            break;
        }
    }
    return result;
}

CaseFeatures extract_features(const nn::ResidualCnn<float>& cnn, const preprocess::PreprocessedCase& c) {
    if (c.slices.empty()) throw EmptyCase("case " + c.case_id + " has no slices");
    const auto frozen = inference_copy(cnn);
    CaseFeatures f;
    f.case_id = c.case_id;
    f.label = c.case_label;
    const Index d = cnn.config().feature_dim;
    f.features.resize(c.num_slices(), d);
    std::vector<const preprocess::PreprocessedSlice*> batch;
    for (Index i = 0; i < c.num_slices(); i += kInferenceBatch) {
        batch.clear();
        for (Index j = i; j < std::min(c.num_slices(), i + kInferenceBatch); ++j)
            batch.push_back(&c.slices[static_cast<std::size_t>(j)]);
        const auto out = frozen.forward(batch_tensor(batch));
        for (Index b = 0; b < static_cast<Index>(batch.size()); ++b) {
            for (Index k = 0; k < d; ++k) f.features(i + b, k) = out.features[b * d + k];
            f.slice_scores.push_back(sigmoid_d(out.logit[b]));
        }
    }
    return f;
}

namespace {

// Time-major [B, D] inputs with zero rows past each case's length.
std::vector<Tensor<float>> sequence_batch(std::span<const CaseFeatures* const> cases, std::vector<Index>& lengths) {
    lengths.clear();
    Index max_len = 0;
    const Index d = cases.front()->features.cols();
    for (const auto* c : cases) {
        if (c->features.cols() != d) throw ShapeError("case " + c->case_id + ": feature width differs in batch");
        lengths.push_back(c->features.rows());
        max_len = std::max(max_len, c->features.rows());
    }
    const auto b = static_cast<Index>(cases.size());
    std::vector<Tensor<float>> seq;
    for (Index t = 0; t < max_len; ++t) {
        Vec<float> v = Vec<float>::Zero(b * d);
        for (Index i = 0; i < b; ++i)
            if (t < lengths[static_cast<std::size_t>(i)])
                for (Index k = 0; k < d; ++k) v[i * d + k] = cases[static_cast<std::size_t>(i)]->features(t, k);
        seq.emplace_back(Shape{b, d}, std::move(v));
    }
    return seq;
}

}  // namespace

std::vector<double> case_scores(const nn::BlstmClassifier<float>& blstm, std::span<const CaseFeatures> cases) {
    const auto frozen = inference_copy(blstm);
    std::mt19937_64 unused(0);
    std::vector<double> out;
    std::vector<const CaseFeatures*> batch;
    std::vector<Index> lengths;
    for (std::size_t i = 0; i < cases.size(); i += kInferenceBatch) {
        batch.clear();
        for (std::size_t j = i; j < std::min(cases.size(), i + kInferenceBatch); ++j) {
            if (cases[j].features.rows() == 0) throw EmptyCase("case " + cases[j].case_id + " has no slices");
            batch.push_back(&cases[j]);
        }
        const auto logit = frozen.forward(sequence_batch(batch, lengths), lengths, 0.0, false, unused);
        for (Index b = 0; b < logit.numel(); ++b) out.push_back(sigmoid_d(logit[b]));
    }
    return out;
}

CaseTrainResult train_case_classifier(std::span<const CaseFeatures> train, std::span<const CaseFeatures> val,
                                      const TrainConfig& cfg, const LogSink& sink) {
    cfg.validate();
    if (train.empty()) throw DegenerateTraining("case training set is empty");
    std::size_t n_pos = 0;
    for (const auto& c : train) n_pos += c.label ? 1 : 0;
    if (n_pos == 0 || n_pos == train.size())
        throw DegenerateTraining("case training set needs both classes (" + std::to_string(n_pos) + " positive of " +
                                 std::to_string(train.size()) + ")");
    const Index d = train.front().features.cols();

    CaseTrainResult result;
    auto model = nn::BlstmClassifier<float>::initialize(d, cfg.case_level.hidden_units, stream_seed(cfg.seed, 2));
    nn::Adam<float> opt(model.parameters().tensors(), cfg.case_level.adam);
    std::mt19937_64 rng(stream_seed(cfg.seed, 3));
    result.model = inference_copy(model);

    std::vector<std::uint8_t> val_labels;
    for (const auto& c : val) val_labels.push_back(c.label);
    std::vector<const CaseFeatures*> order;
    for (const auto& c : train) order.push_back(&c);

    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<Index> lengths;
    std::vector<std::uint8_t> labels;
    for (int epoch = 0; epoch < cfg.case_level.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0, correct = 0;
        const auto bs = static_cast<std::size_t>(cfg.case_level.batch_size);
        for (std::size_t i = 0; i < order.size(); i += bs) {
            const std::span<const CaseFeatures* const> batch(order.data() + i, std::min(order.size(), i + bs) - i);
            labels.clear();
            for (const auto* c : batch) labels.push_back(c->label);
            const auto seq = sequence_batch(batch, lengths);
            const auto p = sigmoid(model.forward(seq, lengths, cfg.case_level.dropout, true, rng));
            const auto loss = nn::bce_loss(p, label_tensor(labels));
            loss.backward();
            opt.step(epoch);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            for (std::size_t j = 0; j < labels.size(); ++j)
                correct += ((p[static_cast<Index>(j)] > 0.5f) == (labels[j] != 0)) ? 1.0 : 0.0;
        }
        const double lr = nn::step_decay_lr(cfg.case_level.adam, epoch);
        EpochLog tl{"blstm", epoch, "train", loss_sum / static_cast<double>(order.size()),
                    correct / static_cast<double>(order.size()), lr};
        result.log.push_back(tl);
        if (sink) sink(tl);

        double monitored = tl.loss;
        if (!val.empty()) {
            const auto scores = case_scores(model, val);
            const auto st = score_stats(scores, val_labels);
            EpochLog vl{"blstm", epoch, "val", st.loss, st.accuracy, lr};
            result.log.push_back(vl);
            if (sink) sink(vl);
            monitored = st.loss;
        }
        if (monitored < best) {
            best = monitored;
            since_best = 0;
            result.best_epoch = epoch;
            result.best_val_loss = monitored;
            result.model = inference_copy(model);
        } else if (++since_best >= cfg.case_level.patience) {
            break;
        }
    }
    return result;
}

CasePrediction infer_case(const nn::ResidualCnn<float>& cnn, const nn::BlstmClassifier<float>& blstm,
                          const data::HUVolume& volume, double threshold) {
    if (volume.slices.empty()) throw EmptyCase("case " + volume.case_id + " has no slices");
    if (blstm.input_dim() != cnn.config().feature_dim)
        throw CorruptCheckpoint("BLSTM input width " + std::to_string(blstm.input_dim()) +
                                " does not match CNN feature width " + std::to_string(cnn.config().feature_dim));
    const auto pc = preprocess::preprocess_case(volume, cnn.config().input_side);
    const auto features = extract_features(cnn, pc);
    CasePrediction pred;
    pred.case_id = volume.case_id;
    pred.score = case_scores(blstm, std::span(&features, 1)).front();
    pred.label = pred.score > threshold ? 1 : 0;
    pred.slice_scores = features.slice_scores;
    return pred;
}

CasePrediction infer_case(const nn::ModelCheckpoint& cnn, const nn::ModelCheckpoint& blstm,
                          const data::HUVolume& volume, double threshold) {
    return infer_case(cnn.cnn_model<float>(), blstm.blstm_model<float>(), volume, threshold);
}

Image class_activation(const RowMatrix<double>& maps, const RowMatrix<double>& grads, Index h, Index w) {
    if (maps.rows() != grads.rows() || maps.cols() != grads.cols() || maps.cols() != h * w)
        throw ShapeError("class_activation: maps " + std::to_string(maps.rows()) + "x" + std::to_string(maps.cols()) +
                         " vs grads " + std::to_string(grads.rows()) + "x" + std::to_string(grads.cols()) +
                         " for a " + std::to_string(h) + "x" + std::to_string(w) + " grid");
    const Eigen::VectorXd alpha = grads.rowwise().mean();
    const Eigen::RowVectorXd l = (alpha.transpose() * maps).cwiseMax(0.0);
    Image out(h, w);
    for (Index i = 0; i < h * w; ++i) out(i / w, i % w) = static_cast<float>(l[i]);
    return out;
}

Image normalize_heatmap(const Image& raw) {
    const float lo = raw.minCoeff(), hi = raw.maxCoeff();
    if (hi > lo) return (raw - lo) / (hi - lo);
    return Image::Constant(raw.rows(), raw.cols(), hi > 0 ? 1.0f : 0.0f);
}

GradCam grad_cam(const nn::ResidualCnn<float>& cnn, const preprocess::PreprocessedSlice& slice) {
    const auto frozen = inference_copy(cnn);
    const preprocess::PreprocessedSlice* ptr = &slice;
    auto x = batch_tensor(std::span(&ptr, 1));
    // Gradients flow back to the input only so the graph is recorded.
    x.set_requires_grad(true);
    auto out = frozen.forward(x);
    out.last_maps.retain_grad();
    out.logit.backward();

    const Index c = out.last_maps.dim(1), h = out.last_maps.dim(2), w = out.last_maps.dim(3);
    const RowMatrix<double> maps =
        ConstMatMap<float>(out.last_maps.data().data(), c, h * w).cast<double>();
    const RowMatrix<double> grads = ConstMatMap<float>(out.last_maps.grad().data(), c, h * w).cast<double>();

    GradCam g;
    g.logit = out.logit.item();
    g.heatmap = normalize_heatmap(class_activation(maps, grads, h, w));
    g.upsampled = preprocess::resize_bilinear(g.heatmap, slice.side, slice.side);
    g.overlay = (0.5f * g.upsampled + 0.5f * Image(slice.channel(2))).cwiseMin(1.0f).cwiseMax(0.0f);
    // First maximum in row-major order.
    float best = -1;
    for (Index r = 0; r < g.upsampled.rows(); ++r)
        for (Index col = 0; col < g.upsampled.cols(); ++col)
            if (g.upsampled(r, col) > best) {
                best = g.upsampled(r, col);
                g.argmax_row = r;
                g.argmax_col = col;
            }
    return g;
}

}  // namespace cspine::pipeline
