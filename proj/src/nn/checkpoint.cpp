#include "cspine/nn/checkpoint.hpp"

#include <json.hpp>

#include <limits>
#include <map>

#include "cspine/io/binary.hpp"

namespace cspine::nn {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'P', 'N'};

nlohmann::json descriptor_json(const ModelCheckpoint& c) {
    nlohmann::json j;
    if (c.cnn) {
        j["cnn"] = {{"in_channels", c.cnn->in_channels}, {"widths", c.cnn->widths},
                    {"blocks", c.cnn->blocks},           {"strides", c.cnn->strides},
                    {"input_side", c.cnn->input_side},   {"feature_dim", c.cnn->feature_dim}};
    }
    if (c.lstm) j["lstm"] = {{"input_dim", c.lstm->input_dim}, {"hidden_dim", c.lstm->hidden_dim}};
    j["meta"] = {{"epoch", c.meta.epoch}, {"seed", c.meta.seed}, {"fold", c.meta.fold}};
    return j;
}

void apply_descriptor(const nlohmann::json& j, ModelCheckpoint& c) {
    try {
        if (j.contains("cnn")) {
            const auto& a = j.at("cnn");
            ResidualCnnConfig cfg;
            cfg.in_channels = a.at("in_channels").get<Index>();
            cfg.widths = a.at("widths").get<std::vector<Index>>();
            cfg.blocks = a.at("blocks").get<std::vector<Index>>();
            cfg.strides = a.at("strides").get<std::vector<Index>>();
            cfg.input_side = a.at("input_side").get<Index>();
            cfg.feature_dim = a.at("feature_dim").get<Index>();
            cfg.validate();
            c.cnn = cfg;
        }
        if (j.contains("lstm"))
            c.lstm = LstmDims{j.at("lstm").at("input_dim").get<Index>(), j.at("lstm").at("hidden_dim").get<Index>()};
        const auto& m = j.at("meta");
        c.meta = {m.at("epoch").get<int>(), m.at("seed").get<std::uint64_t>(), m.at("fold").get<int>()};
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("bad architecture descriptor: ") + e.what());
    } catch (const ParamError& e) {
        throw CorruptCheckpoint(std::string("bad architecture descriptor: ") + e.what());
    }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> ModelCheckpoint::expected_shapes() const {
    std::vector<std::pair<std::string, Shape>> out;
    if (cnn) out = ResidualCnn<float>::parameter_shapes(*cnn);
    if (lstm) {
        auto l = BlstmClassifier<float>::parameter_shapes(lstm->input_dim, lstm->hidden_dim);
        out.insert(out.end(), l.begin(), l.end());
    }
    return out;
}

void ModelCheckpoint::validate() const {
    std::map<std::string, Shape> expected;
    for (auto& [name, shape] : expected_shapes()) expected[name] = shape;
    std::map<std::string, int> seen;
    for (const auto& t : tensors) {
        auto it = expected.find(t.name);
        if (it == expected.end()) throw CorruptCheckpoint("tensor '" + t.name + "' is not part of the architecture");
        if (t.shape != it->second)
            throw CorruptCheckpoint("tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", architecture expects " +
                                    shape_str(it->second));
        if (static_cast<Index>(t.values.size()) != shape_numel(t.shape))
            throw CorruptCheckpoint("tensor '" + t.name + "' value count does not match its shape");
        if (++seen[t.name] > 1) throw CorruptCheckpoint("tensor '" + t.name + "' appears twice");
    }
    for (const auto& [name, _] : expected)
        if (!seen.count(name)) throw CorruptCheckpoint("tensor '" + name + "' is missing");
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt) {
    ckpt.validate();
    io::ByteWriter w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<std::uint16_t>(ckpt.version);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    const std::string desc = descriptor_json(ckpt).dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(desc.size()));
    w.put_bytes(desc);
    for (const auto& t : ckpt.tensors) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
        for (Index d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        w.put_array(std::span<const float>(t.values));
    }
    w.seal();
    return w.bytes();
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    io::ByteReader<CorruptCheckpoint> r(bytes);
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
    r.get_string(4);
    ModelCheckpoint c;
    c.version = r.get<std::uint16_t>();
    if (c.version != ModelCheckpoint::kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
    const auto count = r.get<std::uint32_t>();
    const auto desc_len = r.get<std::uint32_t>();
    const std::string desc = r.get_string(desc_len);
    nlohmann::json j = nlohmann::json::parse(desc, nullptr, false);
    if (j.is_discarded()) throw CorruptCheckpoint("architecture descriptor is not valid JSON");
    apply_descriptor(j, c);

    std::map<std::string, Shape> expected;
    for (auto& [name, shape] : c.expected_shapes()) expected[name] = shape;

    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        t.name = r.get_string(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint8_t>();
        for (int d = 0; d < rank; ++d) t.shape.push_back(static_cast<Index>(r.get<std::uint32_t>()));
        auto it = expected.find(t.name);
        if (it == expected.end()) throw CorruptCheckpoint("tensor '" + t.name + "' is not part of the architecture");
        if (it->second != t.shape)
            throw CorruptCheckpoint("tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", architecture expects " +
                                    shape_str(it->second));
        t.values.resize(static_cast<std::size_t>(shape_numel(t.shape)));
        r.get_array(std::span<float>(t.values));
        c.tensors.push_back(std::move(t));
    }
    r.get<std::uint32_t>();
    if (r.remaining() != 0) throw CorruptCheckpoint("trailing bytes after checkpoint");
    if (!io::trailing_crc_ok(bytes)) throw CorruptCheckpoint("CRC mismatch");
    c.validate();
    return c;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    io::write_file(path, encode_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace cspine::nn
