#include "cspine/cli/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cspine/core/errors.hpp"

namespace cspine::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return k.front() != '.' && k.back() != '.';
}

class LineParser {
public:
    LineParser(const std::string& s, int line) : s_(s), line_(line) {}

    TomlValue value() {
        skip_ws();
        if (peek() == '[') {
            ++i_;
            std::vector<TomlScalar> out;
            skip_ws();
            if (peek() == ']') {
                ++i_;
                return out;
            }
            for (;;) {
                out.push_back(scalar());
                skip_ws();
                if (peek() == ',') {
                    ++i_;
                    skip_ws();
                    if (peek() == ']') {
                        ++i_;
                        break;
                    }
                    continue;
                }
                if (peek() == ']') {
                    ++i_;
                    break;
                }
                fail("expected ',' or ']' in array");
            }
            return out;
        }
        return std::visit([](auto&& v) -> TomlValue { return v; }, scalar());
    }

    void finish() {
        skip_ws();
        if (i_ < s_.size() && s_[i_] != '#') fail("unexpected trailing characters");
    }

private:
    TomlScalar scalar() {
        skip_ws();
        if (peek() == '"') {
            ++i_;
            std::string out;
            while (i_ < s_.size() && s_[i_] != '"') {
                char c = s_[i_++];
                if (c == '\\') {
                    if (i_ >= s_.size()) fail("unterminated escape");
                    const char e = s_[i_++];
                    switch (e) {
                        case 'n': c = '\n'; break;
                        case 't': c = '\t'; break;
                        case '"': c = '"'; break;
                        case '\\': c = '\\'; break;
                        default: fail(std::string("unsupported escape \\") + e);
                    }
                }
                out.push_back(c);
            }
            if (i_ >= s_.size()) fail("unterminated string");
            ++i_;
            return out;
        }
        const auto start = i_;
        while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != ']' && s_[i_] != '#' && !std::isspace(static_cast<unsigned char>(s_[i_])))
            ++i_;
        std::string tok = s_.substr(start, i_ - start);
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string digits;
        for (char c : tok)
            if (c != '_') digits.push_back(c);
        if (digits.empty()) fail("missing value");
        const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
        const char* b = digits.data();
        const char* e = digits.data() + digits.size();
        if (*b == '+') ++b;
        if (is_float) {
            double d = 0;
            auto [p, ec] = std::from_chars(b, e, d);
            if (ec != std::errc() || p != e) fail("bad number '" + tok + "'");
            return d;
        }
        std::int64_t n = 0;
        auto [p, ec] = std::from_chars(b, e, n);
        if (ec != std::errc() || p != e) fail("bad value '" + tok + "'");
        return n;
    }

    char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
    void skip_ws() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("line " + std::to_string(line_) + ": " + what);
    }

    const std::string& s_;
    std::size_t i_ = 0;
    int line_;
};

}  // namespace

TomlTable parse_toml(const std::string& text) {
    TomlTable out;
    std::istringstream is(text);
    std::string prefix, raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const std::string l = trim(raw);
        if (l.empty() || l.front() == '#') continue;
        if (l.front() == '[') {
            const auto close = l.find(']');
            if (close == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": unterminated table header");
            const std::string name = trim(l.substr(1, close - 1));
            const std::string rest = trim(l.substr(close + 1));
            if (!valid_key(name) || (!rest.empty() && rest.front() != '#'))
                throw ConfigError("line " + std::to_string(line) + ": bad table header");
            prefix = name + ".";
            continue;
        }
        const auto eq = l.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected key = value");
        const std::string key = trim(l.substr(0, eq));
        if (!valid_key(key)) throw ConfigError("line " + std::to_string(line) + ": bad key '" + key + "'");
        const std::string rhs = l.substr(eq + 1);
        LineParser p(rhs, line);
        TomlValue v = p.value();
        p.finish();
        if (!out.emplace(prefix + key, std::move(v)).second)
            throw ConfigError("line " + std::to_string(line) + ": duplicate key " + prefix + key);
    }
    return out;
}

namespace {

struct Reader {
    const TomlTable& t;
    std::set<std::string> used;

    const TomlValue* find(const std::string& key) {
        auto it = t.find(key);
        if (it == t.end()) return nullptr;
        used.insert(key);
        return &it->second;
    }

    [[noreturn]] static void type_error(const std::string& key, const char* want) {
        throw ConfigError(key + ": expected " + want);
    }

    static double as_double(const TomlScalar& s, const std::string& key) {
        if (auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
        if (auto* d = std::get_if<double>(&s)) return *d;
        type_error(key, "a number");
    }
    static std::int64_t as_int(const TomlScalar& s, const std::string& key) {
        if (auto* i = std::get_if<std::int64_t>(&s)) return *i;
        type_error(key, "an integer");
    }

    static TomlScalar scalar_of(const TomlValue& v, const std::string& key) {
        return std::visit(
            [&](auto&& x) -> TomlScalar {
                if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::vector<TomlScalar>>) type_error(key, "a scalar");
                else return x;
            },
            v);
    }

    template <typename T>
    void num(const std::string& key, T& out) {
        if (auto* v = find(key)) {
            const auto s = scalar_of(*v, key);
            if constexpr (std::is_floating_point_v<T>) out = static_cast<T>(as_double(s, key));
            else {
                const auto n = as_int(s, key);
                if (n < 0 && std::is_unsigned_v<T>) throw ConfigError(key + ": must be non-negative");
                out = static_cast<T>(n);
            }
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (auto* v = find(key)) {
            auto* b = std::get_if<bool>(v);
            if (!b) type_error(key, "true or false");
            out = *b;
        }
    }
    void str(const std::string& key, std::string& out) {
        if (auto* v = find(key)) {
            auto* s = std::get_if<std::string>(v);
            if (!s) type_error(key, "a string");
            out = *s;
        }
    }
    void indices(const std::string& key, std::vector<Index>& out) {
        if (auto* v = find(key)) {
            if (auto* a = std::get_if<std::vector<TomlScalar>>(v)) {
                out.clear();
                for (const auto& s : *a) out.push_back(static_cast<Index>(as_int(s, key)));
            } else {
                out = {static_cast<Index>(as_int(scalar_of(*v, key), key))};
            }
        }
    }
    void adam(const std::string& table, nn::AdamOptions& o) {
        num(table + ".learning_rate", o.learning_rate);
        num(table + ".beta1", o.beta1);
        num(table + ".beta2", o.beta2);
        num(table + ".epsilon", o.epsilon);
        num(table + ".decay_period", o.decay_period);
        num(table + ".gamma", o.gamma);
    }
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_list(const std::vector<Index>& xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + std::to_string(xs[i]);
    return s + "]";
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out.push_back(c);
    }
    return out + "\"";
}

}  // namespace

RunConfig apply_toml(const TomlTable& table, RunConfig c) {
    Reader r{table, {}};
    r.str("data_dir", c.data_dir);
    r.str("out_dir", c.out_dir);
    r.num("seed", c.seed);
    r.num("folds", c.folds);
    r.num("fold", c.fold);
    r.indices("hidden_units", c.hidden_units);
    r.boolean("gradcam", c.gradcam);
    r.num("threshold", c.train.threshold);

    r.num("data.cases", c.data.cases);
    r.num("data.positive_fraction", c.data.positive_fraction);
    r.num("data.slices", c.data.slices);
    r.num("data.side", c.data.side);

    auto& cnn = c.train.cnn;
    r.num("cnn.side", cnn.input_side);
    r.indices("cnn.widths", cnn.widths);
    r.indices("cnn.blocks", cnn.blocks);
    r.indices("cnn.strides", cnn.strides);
    cnn.feature_dim = cnn.widths.empty() ? 0 : cnn.widths.back();
    r.num("cnn.feature_dim", cnn.feature_dim);
    auto& im = c.train.image;
    r.adam("cnn", im.adam);
    r.num("cnn.batch_size", im.batch_size);
    r.num("cnn.epochs", im.epochs);
    r.num("cnn.patience", im.patience);
    r.num("cnn.negatives_per_positive", im.negatives_per_positive);
    r.boolean("cnn.augment", im.augment);

    auto& cl = c.train.case_level;
    r.adam("blstm", cl.adam);
    r.num("blstm.batch_size", cl.batch_size);
    r.num("blstm.epochs", cl.epochs);
    r.num("blstm.patience", cl.patience);
    r.num("blstm.dropout", cl.dropout);

    for (const auto& [key, _] : table)
        if (!r.used.count(key)) throw ConfigError("unknown config key '" + key + "'");
    return c;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return apply_toml(parse_toml(ss.str()), std::move(base));
}

void RunConfig::validate() const {
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (fold < 0 || fold >= folds) throw ConfigError("fold must lie in [0, folds)");
    if (hidden_units.empty()) throw ConfigError("hidden_units must not be empty");
    for (Index h : hidden_units)
        if (h < 1) throw ConfigError("hidden_units must be positive");
    if (data.cases < 1) throw ConfigError("data.cases must be >= 1");
    if (!(data.positive_fraction >= 0 && data.positive_fraction <= 1))
        throw ConfigError("data.positive_fraction must lie in [0,1]");
    if (data.slices < 4) throw ConfigError("data.slices must be >= 4");
    if (data.side < 32) throw ConfigError("data.side must be >= 32");
    try {
        train.validate();
    } catch (const ParamError& e) {
        throw ConfigError(e.what());
    }
}

std::string RunConfig::to_toml() const {
    std::ostringstream os;
    os << "data_dir = " << quote(data_dir) << '\n';
    os << "out_dir = " << quote(out_dir) << '\n';
    os << "seed = " << seed << '\n';
    os << "folds = " << folds << '\n';
    os << "fold = " << fold << '\n';
    os << "hidden_units = " << fmt_list(hidden_units) << '\n';
    os << "gradcam = " << (gradcam ? "true" : "false") << '\n';
    os << "threshold = " << fmt_double(train.threshold) << '\n';

    os << "\n[data]\n";
    os << "cases = " << data.cases << '\n';
    os << "positive_fraction = " << fmt_double(data.positive_fraction) << '\n';
    os << "slices = " << data.slices << '\n';
    os << "side = " << data.side << '\n';

    auto adam = [&](const nn::AdamOptions& o) {
        os << "learning_rate = " << fmt_double(o.learning_rate) << '\n';
        os << "beta1 = " << fmt_double(o.beta1) << '\n';
        os << "beta2 = " << fmt_double(o.beta2) << '\n';
        os << "epsilon = " << fmt_double(o.epsilon) << '\n';
        os << "decay_period = " << o.decay_period << '\n';
        os << "gamma = " << fmt_double(o.gamma) << '\n';
    };
    const auto& cnn = train.cnn;
    const auto& im = train.image;
    os << "\n[cnn]\n";
    os << "side = " << cnn.input_side << '\n';
    os << "widths = " << fmt_list(cnn.widths) << '\n';
    os << "blocks = " << fmt_list(cnn.blocks) << '\n';
    os << "strides = " << fmt_list(cnn.strides) << '\n';
    os << "feature_dim = " << cnn.feature_dim << '\n';
    adam(im.adam);
    os << "batch_size = " << im.batch_size << '\n';
    os << "epochs = " << im.epochs << '\n';
    os << "patience = " << im.patience << '\n';
    os << "negatives_per_positive = " << im.negatives_per_positive << '\n';
    os << "augment = " << (im.augment ? "true" : "false") << '\n';

    const auto& cl = train.case_level;
    os << "\n[blstm]\n";
    adam(cl.adam);
    os << "batch_size = " << cl.batch_size << '\n';
    os << "epochs = " << cl.epochs << '\n';
    os << "patience = " << cl.patience << '\n';
    os << "dropout = " << fmt_double(cl.dropout) << '\n';
    return os.str();
}

pipeline::CvConfig RunConfig::cv() const {
    pipeline::CvConfig c;
    c.train = train;
    c.train.seed = seed;
    c.folds = folds;
    c.hidden_units = hidden_units;
    c.seed = seed;
    c.gradcam = gradcam;
    return c;
}

}  // namespace cspine::cli
