#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cspine/cli/commands.hpp"
#include "cspine/core/errors.hpp"
#include "cspine/data/volume.hpp"
#include "cspine/io/binary.hpp"
#include "cspine/nn/checkpoint.hpp"
#include "cspine/preprocess/preprocess.hpp"

using namespace cspine;
using namespace cspine::cli;
namespace fs = std::filesystem;

namespace {

// 12 small cases, half positive; a toy CNN and two short phases.
constexpr const char* kTinyToml = R"(seed = 11
folds = 3
hidden_units = [4]

[data]
cases = 12
positive_fraction = 0.5
slices = 4
side = 32

[cnn]
side = 16
widths = [4, 8]
blocks = [1, 1]
strides = [2, 1]
feature_dim = 8
epochs = 2
patience = 2
augment = false

[blstm]
epochs = 2
patience = 2
)";

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::vector<const char*> argv{"cspine"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("cspine_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream(dir_ / "tiny.toml") << kTinyToml;
        unsetenv(kDataDirEnv);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string p(const std::string& rel) const { return (dir_ / rel).string(); }
    std::string config() const { return p("tiny.toml"); }

    void gen(const std::string& data = "data") {
        const auto r = invoke({"--config", config(), "--data", p(data), "gen-data"});
        ASSERT_EQ(r.code, 0) << r.err;
    }

    // CNN checkpoint matching the tiny config, all parameters zero.
    std::string zero_cnn() {
        const auto cfg = load_config(config());
        auto m = nn::ResidualCnn<float>::initialize(cfg.train.cnn, 1);
        auto params = m.parameters();  // handles share storage with the model
        for (auto& [name, t] : params.entries()) t.mutable_data().setZero();
        nn::ModelCheckpoint ck;
        ck.cnn = cfg.train.cnn;
        ck.add_parameters(m.parameters());
        const auto path = p("zero_cnn.ckpt");
        nn::save_checkpoint(ck, path);
        return path;
    }

    fs::path dir_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Toml, ParsesScalarsArraysAndTables) {
    const auto t = parse_toml(
        "# comment\n"
        "a = 3\nb = -2.5e-1\nc = true\nd = \"x # y\"  # trailing\n"
        "[sec.sub]\ne = [1, 2.0, \"z\", false]\n");
    EXPECT_EQ(std::get<std::int64_t>(t.at("a")), 3);
    EXPECT_DOUBLE_EQ(std::get<double>(t.at("b")), -0.25);
    EXPECT_TRUE(std::get<bool>(t.at("c")));
    EXPECT_EQ(std::get<std::string>(t.at("d")), "x # y");
    const auto& e = std::get<std::vector<TomlScalar>>(t.at("sec.sub.e"));
    ASSERT_EQ(e.size(), 4u);
    EXPECT_EQ(std::get<std::int64_t>(e[0]), 1);
    EXPECT_EQ(std::get<std::string>(e[2]), "z");
}

TEST(Toml, ErrorsCarryLineNumbers) {
    try {
        parse_toml("a = 1\n\nb 2\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_toml("a = 1\na = 2\n"), ConfigError);
    EXPECT_THROW(parse_toml("[open\n"), ConfigError);
}

TEST(Config, UnknownKeyIsRejected) {
    EXPECT_THROW(apply_toml(parse_toml("seed = 1\nbogus = 2\n")), ConfigError);
    EXPECT_THROW(apply_toml(parse_toml("[cnn]\nwidth = 4\n")), ConfigError);
}

TEST(Config, TypeMismatchIsRejected) {
    EXPECT_THROW(apply_toml(parse_toml("seed = \"one\"\n")), ConfigError);
    EXPECT_THROW(apply_toml(parse_toml("folds = 1\n")).validate(), ConfigError);
}

TEST(Config, EchoRoundTripsExactly) {
    RunConfig c = apply_toml(parse_toml(kTinyToml));
    c.data.positive_fraction = 729.0 / 3666.0;  // not representable in few digits
    c.train.image.adam.learning_rate = 1.0 / 3.0;
    const auto text = c.to_toml();
    const auto back = apply_toml(parse_toml(text));
    EXPECT_EQ(back.to_toml(), text);
    EXPECT_EQ(back.data.positive_fraction, c.data.positive_fraction);
    EXPECT_EQ(back.train.image.adam.learning_rate, c.train.image.adam.learning_rate);
    EXPECT_EQ(back.train.cnn, c.train.cnn);
    EXPECT_EQ(back.hidden_units, c.hidden_units);
}

TEST(Config, TinyFileOverridesDefaults) {
    const auto c = apply_toml(parse_toml(kTinyToml));
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.folds, 3);
    EXPECT_EQ(c.train.cnn.input_side, 16);
    EXPECT_EQ(c.train.cnn.widths, (std::vector<Index>{4, 8}));
    EXPECT_FALSE(c.train.image.augment);
    EXPECT_EQ(c.hidden_units, (std::vector<Index>{4}));
    // untouched key keeps the default
    EXPECT_EQ(c.train.image.batch_size, pipeline::TrainConfig::desk().image.batch_size);
}

// ---------------------------------------------------------------------------
// gen-data

TEST_F(CliTest, GenDataCountsAndCensus) {
    const auto r = invoke({"--config", config(), "--seed", "3", "gen-data", "--out", p("d")});
    // --out is a global option; CLI11 falls through from the subcommand
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = data::read_manifest(p("d/manifest.json"));
    EXPECT_EQ(m.num_cases(), 12);
    EXPECT_EQ(m.num_positive_cases(), 6);

    // manifest counts agree with what is on disk
    Index cases = 0, pos = 0, slices = 0, pos_slices = 0;
    for (const auto& e : fs::directory_iterator(p("d"))) {
        if (e.path().filename() == kManifestName || e.path().filename() == kConfigEchoName) continue;
        const auto v = data::read_case(e.path().string());
        ++cases;
        pos += v.case_label;
        slices += v.num_slices();
        for (auto l : v.image_labels) pos_slices += l;
    }
    EXPECT_EQ(cases, m.num_cases());
    EXPECT_EQ(pos, m.num_positive_cases());
    EXPECT_EQ(slices, m.num_slices());
    EXPECT_EQ(pos_slices, m.num_positive_slices());
    EXPECT_TRUE(fs::exists(p("d/config.resolved.toml")));
}

TEST_F(CliTest, GenDataTenCasesFractionPointTwo) {
    std::ofstream(p("ten.toml")) << "[data]\ncases = 10\npositive_fraction = 0.2\nslices = 4\nside = 32\n";
    const auto r = invoke({"--config", p("ten.toml"), "--out", p("d"), "gen-data"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = data::read_manifest(p("d/manifest.json"));
    EXPECT_EQ(m.num_cases(), 10);
    EXPECT_EQ(m.num_positive_cases(), 2);
}

TEST_F(CliTest, GenDataIsDeterministic) {
    ASSERT_EQ(invoke({"--config", config(), "--out", p("a"), "gen-data"}).code, 0);
    ASSERT_EQ(invoke({"--config", config(), "--out", p("b"), "gen-data"}).code, 0);
    const auto a = io::read_file(p("a/manifest.json")), b = io::read_file(p("b/manifest.json"));
    EXPECT_EQ(io::crc32(a), io::crc32(b));
    EXPECT_EQ(a, b);
    for (const auto& e : fs::directory_iterator(p("a")))
        if (e.path().filename() != kConfigEchoName)  // records the differing --out
            EXPECT_EQ(slurp(e.path()), slurp(p("b") / e.path().filename())) << e.path();

    ASSERT_EQ(invoke({"--config", config(), "--seed", "12", "--out", p("c"), "gen-data"}).code, 0);
    EXPECT_NE(io::read_file(p("c/manifest.json")), a);
}

TEST_F(CliTest, DataDirFromEnvironment) {
    setenv(kDataDirEnv, p("envdata").c_str(), 1);
    const auto r = invoke({"--config", config(), "gen-data"});
    unsetenv(kDataDirEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("envdata/manifest.json")));
}

TEST_F(CliTest, FlagOverridesEnvironment) {
    setenv(kDataDirEnv, p("envdata").c_str(), 1);
    const auto r = invoke({"--config", config(), "--data", p("flagdata"), "gen-data"});
    unsetenv(kDataDirEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("flagdata/manifest.json")));
    EXPECT_FALSE(fs::exists(p("envdata")));
}

// ---------------------------------------------------------------------------
// Exit codes

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(invoke({"--help"}).code, 0);
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"gen-data", "--no-such-flag"}).code, 2);
    EXPECT_EQ(invoke({"--config", p("missing.toml"), "gen-data"}).code, 2);

    std::ofstream(p("bad.toml")) << "seed = 1\nnope = 2\n";
    const auto unknown = invoke({"--config", p("bad.toml"), "gen-data", "--out", p("x")});
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.err.find("nope"), std::string::npos);

    const auto missing = invoke({"--config", config(), "--data", p("nothing"), "--out", p("o"), "train-cnn"});
    EXPECT_EQ(missing.code, 3);
    EXPECT_NE(missing.err.find("manifest"), std::string::npos) << missing.err;
}

TEST_F(CliTest, CorruptCaseIsDataError) {
    gen();
    const auto victim = p("data/") + data::case_filename("case_0003");
    auto bytes = io::read_file(victim);
    bytes[bytes.size() / 2] ^= 0xFF;
    io::write_file(victim, bytes);
    EXPECT_EQ(invoke({"--config", config(), "--data", p("data"), "--out", p("o"), "preprocess"}).code, 3);
}

TEST_F(CliTest, ShapeMismatchIsRuntimeError) {
    gen();
    const auto ck = zero_cnn();  // input side 16
    const auto r = invoke({"--config", config(), "--data", p("data"), "--out", p("o"), "--side", "24", "train-blstm",
                        "--cnn", ck});
    EXPECT_EQ(r.code, 4) << r.err;
}

// ---------------------------------------------------------------------------
// preprocess / gradcam

TEST_F(CliTest, PreprocessWritesThreeWindowsPerSlice) {
    gen();
    const auto r = invoke({"--config", config(), "--data", p("data"), "--out", p("o"), "preprocess", "--case",
                        "case_0002", "--slice", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    int pgms = 0;
    for (const auto& e : fs::directory_iterator(p("o/preprocessed/case_0002"))) {
        const auto img = preprocess::read_pgm(e.path().string());
        EXPECT_EQ(img.rows(), 16);
        ++pgms;
    }
    EXPECT_EQ(pgms, 3);
    EXPECT_EQ(invoke({"--config", config(), "--data", p("data"), "--out", p("o"), "preprocess", "--case", "nope"}).code,
              3);
}

TEST_F(CliTest, GradcamUnknownCaseOrSliceIsNotFound) {
    gen();
    const auto ck = zero_cnn();
    const std::vector<std::string> base{"--config", config(), "--data", p("data"), "--out", p("o")};
    auto with = [&](std::vector<std::string> extra) {
        auto a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return invoke(a);
    };
    EXPECT_EQ(with({"gradcam", "--cnn", ck, "--case", "case_9999", "--slice", "0"}).code, 3);
    EXPECT_EQ(with({"gradcam", "--cnn", ck, "--case", "case_0000", "--slice", "4"}).code, 3);
    EXPECT_EQ(with({"gradcam", "--cnn", ck, "--case", "case_0000"}).code, 2);
    EXPECT_EQ(with({"gradcam", "--cnn", p("absent.ckpt"), "--case", "case_0000", "--slice", "0"}).code, 3);
}

TEST_F(CliTest, GradcamZeroModelAndSidecarBoxes) {
    gen();
    const auto ck = zero_cnn();
    const auto m = data::read_manifest(p("data/manifest.json"));
    // first positive slice of the first positive case
    const data::ManifestEntry* entry = nullptr;
    for (const auto& e : m.entries)
        if (e.case_label && !entry) entry = &e;
    ASSERT_NE(entry, nullptr);
    const auto cfg = load_config(config());
    // regenerate the case straight from its recorded seed
    const auto truth = data::generate_case(entry->seed, true, cfg.data.slices, cfg.data.side);
    Index slice = -1;
    for (Index n = 0; n < truth.num_slices(); ++n)
        if (truth.image_labels[static_cast<std::size_t>(n)] && slice < 0) slice = n;
    ASSERT_GE(slice, 0);

    const auto r = invoke({"--config", config(), "--data", p("data"), "--out", p("o"), "gradcam", "--cnn", ck, "--case",
                        entry->case_id, "--slice", std::to_string(slice)});
    ASSERT_EQ(r.code, 0) << r.err;
    char stem[96];
    std::snprintf(stem, sizeof stem, "o/gradcam/%s_slice%03ld", entry->case_id.c_str(), static_cast<long>(slice));

    const auto heat = preprocess::read_pgm(p(std::string(stem) + "_heatmap.pgm"));
    EXPECT_EQ(heat.rows(), 16);
    EXPECT_EQ(heat.maxCoeff(), 0.0f);
    EXPECT_TRUE(fs::exists(p(std::string(stem) + "_overlay.pgm")));

    const auto j = nlohmann::json::parse(slurp(p(std::string(stem) + ".json")));
    EXPECT_EQ(j["case_id"], entry->case_id);
    EXPECT_EQ(j["image_label"], 1);
    EXPECT_EQ(j["logit"].get<double>(), 0.0);
    const auto& boxes = truth.fracture_boxes[static_cast<std::size_t>(slice)];
    ASSERT_EQ(j["ground_truth_boxes"].size(), boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const auto& b = j["ground_truth_boxes"][k];
        EXPECT_EQ(b[0].get<Index>(), boxes[k].r0);
        EXPECT_EQ(b[1].get<Index>(), boxes[k].r1);
        EXPECT_EQ(b[2].get<Index>(), boxes[k].c0);
        EXPECT_EQ(b[3].get<Index>(), boxes[k].c1);
    }
    EXPECT_TRUE(j.contains("argmax_in_dilated_box"));
}

// ---------------------------------------------------------------------------
// Single-fold stages and the full cross-validation

TEST_F(CliTest, StagesChainOnOneFold) {
    gen();
    const std::vector<std::string> base{"--config", config(), "--data", p("data"), "--out", p("o")};
    auto run = [&](std::vector<std::string> extra) {
        auto a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return invoke(a);
    };
    auto r = run({"train-cnn", "--fold", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("o/cnn.ckpt")));
    EXPECT_EQ(nn::load_checkpoint(p("o/cnn.ckpt")).meta.fold, 1);
    r = run({"train-blstm", "--fold", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("o/blstm4.ckpt")));
    r = run({"evaluate", "--fold", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(p("o/evaluation.json")));
    EXPECT_EQ(j["fold"], 1);
    EXPECT_EQ(j["predictions"].size(), 4u);  // 12 cases over 3 folds

    // train-cnn log is one JSON object per line
    std::ifstream log(p("o/cnn_log.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        EXPECT_EQ(nlohmann::json::parse(line)["phase"], "cnn");
        ++lines;
    }
    EXPECT_EQ(lines, 2);  // 2 epochs; 4 training cases per class leave no validation holdout
}

TEST_F(CliTest, RunCvReportsAndReproducesFromEcho) {
    gen();
    auto r = invoke({"--config", config(), "--data", p("data"), "--out", p("cv1"), "run-cv"});
    ASSERT_EQ(r.code, 0) << r.err;

    for (const auto* name : {"image_level.txt", "image_level.json", "case_level.txt", "case_level.json",
                             "roc_blstm4.csv", "summary.json"})
        EXPECT_TRUE(fs::exists(p("cv1/reports/") + name)) << name;
    for (int f = 0; f < 3; ++f) {
        EXPECT_TRUE(fs::exists(p("cv1/checkpoints/fold" + std::to_string(f) + "/cnn.ckpt")));
        EXPECT_TRUE(fs::exists(p("cv1/checkpoints/fold" + std::to_string(f) + "/blstm4.ckpt")));
        EXPECT_TRUE(fs::exists(p("cv1/logs/fold" + std::to_string(f) + ".jsonl")));
    }

    // eight metric columns; balanced and imbalanced rows share TPR
    std::istringstream table(slurp(p("cv1/reports/case_level.txt")));
    std::string line;
    std::getline(table, line);  // title
    std::getline(table, line);
    const std::vector<std::string> want{"TPR", "TNR", "PPV", "NPV", "F1", "Acc", "MCC", "AUC"};
    std::istringstream header(line);
    std::vector<std::string> cols;
    for (std::string w; header >> w;) cols.push_back(w);
    ASSERT_EQ(cols.size(), 10u);
    EXPECT_EQ(std::vector<std::string>(cols.begin() + 2, cols.end()), want);

    const auto cj = nlohmann::json::parse(slurp(p("cv1/reports/case_level.json")));
    std::map<std::string, nlohmann::json> tpr;
    for (const auto& row : cj["rows"]) tpr[row["data"]] = row["metrics"]["TPR"];
    ASSERT_EQ(tpr.size(), 2u);
    EXPECT_EQ(tpr.begin()->second.dump(), std::next(tpr.begin())->second.dump());

    // rerun from the echoed config alone
    const auto echo = p("cv1/config.resolved.toml");
    fs::copy_file(echo, p("echo.toml"));
    r = invoke({"--config", p("echo.toml"), "--out", p("cv2"), "run-cv"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& e : fs::recursive_directory_iterator(p("cv1"))) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), p("cv1"));
        if (rel == kConfigEchoName) continue;  // differs only in out_dir
        EXPECT_EQ(slurp(e.path()), slurp(p("cv2") / rel)) << rel;
    }
    auto echo1 = slurp(echo), echo2 = slurp(p("cv2/config.resolved.toml"));
    const auto strip = [](std::string s) {
        std::istringstream in(s);
        std::string out, l;
        while (std::getline(in, l))
            if (l.rfind("out_dir", 0) != 0) out += l + "\n";
        return out;
    };
    EXPECT_EQ(strip(echo1), strip(echo2));
}
