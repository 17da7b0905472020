#include "cspine/data/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "cspine/core/errors.hpp"
#include "cspine/io/binary.hpp"

namespace cspine::data {

// ---------------------------------------------------------------------------
// Case files

namespace {
constexpr char kCaseMagic[4] = {'C', 'S', 'V', 'L'};
}

std::vector<std::uint8_t> encode_case(const HUVolume& v) {
    v.validate();
    io::ByteWriter w;
    w.put_bytes(std::string_view(kCaseMagic, 4));
    w.put<std::uint16_t>(kCaseFileVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.num_slices()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.height()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.width()));
    w.put<std::uint8_t>(v.case_label);
    for (auto y : v.image_labels) w.put<std::uint8_t>(y);
    for (const auto& boxes : v.fracture_boxes) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(boxes.size()));
        for (const auto& b : boxes)
            for (Index x : {b.r0, b.r1, b.c0, b.c1}) w.put<std::uint16_t>(static_cast<std::uint16_t>(x));
    }
    for (const auto& s : v.slices) w.put_array(std::span<const std::int16_t>(s.data(), static_cast<std::size_t>(s.size())));
    w.seal();
    return w.bytes();
}

HUVolume decode_case(std::span<const std::uint8_t> bytes, const std::string& case_id) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCaseMagic, 4) != 0) throw FormatError("not a case file (bad magic)");
    if (!io::trailing_crc_ok(bytes)) throw FormatError("case file CRC mismatch or truncation");
    io::ByteReader<FormatError> r(bytes);
    r.get_string(4);
    if (const auto version = r.get<std::uint16_t>(); version != kCaseFileVersion)
        throw FormatError("unsupported case file version " + std::to_string(version));
    HUVolume v;
    v.case_id = case_id;
    const Index n = r.get<std::uint32_t>(), h = r.get<std::uint32_t>(), w = r.get<std::uint32_t>();
    v.case_label = r.get<std::uint8_t>();
    for (Index i = 0; i < n; ++i) v.image_labels.push_back(r.get<std::uint8_t>());
    for (Index i = 0; i < n; ++i) {
        std::vector<BBox> boxes(r.get<std::uint16_t>());
        for (auto& b : boxes) {
            b.r0 = r.get<std::uint16_t>();
            b.r1 = r.get<std::uint16_t>();
            b.c0 = r.get<std::uint16_t>();
            b.c1 = r.get<std::uint16_t>();
        }
        v.fracture_boxes.push_back(std::move(boxes));
    }
    for (Index i = 0; i < n; ++i) {
        HuImage s(h, w);
        r.get_array(std::span<std::int16_t>(s.data(), static_cast<std::size_t>(s.size())));
        v.slices.push_back(s.cwiseMax(static_cast<std::int16_t>(kHuMin)).cwiseMin(static_cast<std::int16_t>(kHuMax)));
    }
    r.get<std::uint32_t>();
    if (r.remaining() != 0) throw FormatError("trailing bytes in case file");
    try {
        v.validate();
    } catch (const ParamError& e) {
        throw FormatError(e.what());
    }
    return v;
}

void write_case(const HUVolume& volume, const std::string& path) { io::write_file(path, encode_case(volume)); }

HUVolume read_case(const std::string& path) {
    return decode_case(io::read_file(path), std::filesystem::path(path).stem().string());
}

std::string case_filename(const std::string& case_id) { return case_id + ".csvl"; }

// ---------------------------------------------------------------------------
// Manifest

Index Manifest::num_positive_cases() const {
    return std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.case_label == 1; });
}
Index Manifest::num_slices() const {
    Index n = 0;
    for (const auto& e : entries) n += e.num_slices;
    return n;
}
Index Manifest::num_positive_slices() const {
    Index n = 0;
    for (const auto& e : entries) n += e.positive_slices;
    return n;
}

const ManifestEntry& Manifest::find(const std::string& case_id) const {
    for (const auto& e : entries)
        if (e.case_id == case_id) return e;
    throw NotFound("case " + case_id + " is not in the manifest");
}

std::string Manifest::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"case_id", e.case_id},
                       {"num_slices", e.num_slices},
                       {"case_label", e.case_label},
                       {"positive_slices", e.positive_slices},
                       {"seed", e.seed},
                       {"age", e.demographics.age},
                       {"sex", std::string(1, e.demographics.sex)}});
    return arr.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
    Manifest m;
    try {
        const auto arr = nlohmann::json::parse(text);
        if (!arr.is_array()) throw FormatError("manifest must be a JSON array");
        for (const auto& j : arr) {
            ManifestEntry e;
            e.case_id = j.at("case_id").get<std::string>();
            e.num_slices = j.at("num_slices").get<Index>();
            e.case_label = j.at("case_label").get<std::uint8_t>();
            e.positive_slices = j.at("positive_slices").get<Index>();
            e.seed = j.at("seed").get<std::uint64_t>();
            e.demographics.age = j.value("age", 0);
            const std::string sex = j.value("sex", std::string("F"));
            e.demographics.sex = sex.empty() ? 'F' : sex[0];
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad manifest: ") + e.what());
    }
    return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
    const std::string s = m.to_json();
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Manifest read_manifest(const std::string& path) {
    const auto bytes = io::read_file(path);
    return Manifest::from_json(std::string(bytes.begin(), bytes.end()));
}

ManifestEntry manifest_entry(const HUVolume& v, std::uint64_t seed) {
    return {v.case_id, v.num_slices(), v.case_label, v.positive_slices(), seed, v.demographics};
}

namespace {

std::pair<double, double> mean_sample_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

ManifestStats manifest_stats(const Manifest& m) {
    if (m.entries.empty()) throw ParamError("manifest is empty");
    ManifestStats s;
    std::vector<double> age_pos, age_neg;
    double fp = 0, fn = 0, mp = 0, mn = 0;
    for (const auto& e : m.entries) {
        const bool pos = e.case_label == 1, female = e.demographics.sex == 'F';
        (pos ? age_pos : age_neg).push_back(e.demographics.age);
        (female ? (pos ? fp : fn) : (pos ? mp : mn)) += 1;
    }
    const double n = static_cast<double>(m.entries.size());
    s.female_positive = 100 * fp / n;
    s.female_negative = 100 * fn / n;
    s.male_positive = 100 * mp / n;
    s.male_negative = 100 * mn / n;
    std::tie(s.age_mean_positive, s.age_std_positive) = mean_sample_std(age_pos);
    std::tie(s.age_mean_negative, s.age_std_negative) = mean_sample_std(age_neg);
    s.positives = static_cast<Index>(age_pos.size());
    s.negatives = static_cast<Index>(age_neg.size());
    return s;
}

std::string ManifestStats::table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    auto pct = [](double v) {
        std::ostringstream o;
        o << std::fixed << std::setprecision(2) << v << '%';
        return o.str();
    };
    auto age = [](double m, double sd) {
        std::ostringstream o;
        o << std::fixed << std::setprecision(2) << m << "±" << sd;
        return o.str();
    };
    os << std::left << std::setw(8) << "" << std::setw(16) << "Positive" << "Negative\n";
    os << std::setw(8) << "Female" << std::setw(16) << pct(female_positive) << pct(female_negative) << '\n';
    os << std::setw(8) << "Male" << std::setw(16) << pct(male_positive) << pct(male_negative) << '\n';
    os << std::setw(8) << "Age" << std::setw(17) << age(age_mean_positive, age_std_positive)
       << age(age_mean_negative, age_std_negative) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Folds

FoldPlan kfold_split(std::span<const LabeledCase> cases, int k, std::uint64_t seed) {
    if (k < 2) throw ParamError("K must be at least 2");
    if (static_cast<Index>(cases.size()) < k) throw StratificationError("fewer cases than folds");
    std::vector<std::string> pos, neg;
    for (const auto& c : cases) (c.label ? pos : neg).push_back(c.case_id);
    if (static_cast<int>(pos.size()) < k || static_cast<int>(neg.size()) < k)
        throw StratificationError("each class needs at least K=" + std::to_string(k) + " cases (have " +
                                  std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) + " negative)");
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.folds.resize(static_cast<std::size_t>(k));
    std::size_t dealt = 0;
    for (const auto* group : {&pos, &neg})
        for (const auto& id : *group) {
            const int f = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
            plan.assignment[id] = f;
            plan.folds[static_cast<std::size_t>(f)].test.push_back(id);
        }

    std::map<std::string, std::uint8_t> label;
    for (const auto& c : cases) label[c.case_id] = c.label;
    for (int f = 0; f < k; ++f) {
        // Training = the other folds, in original input order, then class-wise validation holdout.
        std::vector<std::string> tr_pos, tr_neg;
        for (const auto& c : cases)
            if (plan.assignment[c.case_id] != f) (c.label ? tr_pos : tr_neg).push_back(c.case_id);
        std::mt19937_64 vrng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(f + 1)));
        auto& fold = plan.folds[static_cast<std::size_t>(f)];
        for (auto* group : {&tr_pos, &tr_neg}) {
            std::shuffle(group->begin(), group->end(), vrng);
            const auto n_val = static_cast<std::size_t>(std::lround(kValidationFraction * static_cast<double>(group->size())));
            fold.validation.insert(fold.validation.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(n_val));
            fold.train.insert(fold.train.end(), group->begin() + static_cast<std::ptrdiff_t>(n_val), group->end());
        }
        std::sort(fold.train.begin(), fold.train.end());
        std::sort(fold.validation.begin(), fold.validation.end());
        std::sort(fold.test.begin(), fold.test.end());
    }
    return plan;
}

TestSets build_test_sets(std::span<const LabeledCase> test_cases, std::uint64_t seed) {
    TestSets out;
    std::vector<LabeledCase> pos, neg;
    for (const auto& c : test_cases) {
        out.imbalanced.push_back(c);
        (c.label ? pos : neg).push_back(c);
    }
    if (pos.empty()) throw DegenerateTestSet("test fold has no positive cases");
    std::mt19937_64 rng(seed);
    std::shuffle(neg.begin(), neg.end(), rng);
    neg.resize(std::min(neg.size(), pos.size()));
    std::sort(neg.begin(), neg.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
    // Keep the input order of the fold for both sets.
    for (const auto& c : test_cases)
        if (c.label || std::any_of(neg.begin(), neg.end(), [&](const auto& n) { return n.case_id == c.case_id; }))
            out.balanced.push_back(c);
    return out;
}

}  // namespace cspine::data
