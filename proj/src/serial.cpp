#include "bft/serial.hpp"

#include <algorithm>

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace bft {

using nlohmann::json;

const char* io_code_name(IoCode c) {
    switch (c) {
        case IoCode::BadMagic: return "bad_magic";
        case IoCode::Truncated: return "truncated";
        case IoCode::VersionMismatch: return "version_mismatch";
        case IoCode::DigestMismatch: return "digest_mismatch";
        case IoCode::ShapeMismatch: return "shape_mismatch";
        case IoCode::WrongKind: return "wrong_kind";
    }
    return "io_error";
}

namespace wire {

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw io_error(IoCode::Truncated, std::string("while reading ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_header(std::ostream& out, const char magic[4], const std::string& json_text) {
    out.write(magic, 4);
    write_u32(out, static_cast<uint32_t>(json_text.size()));
    out.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
}

std::string read_header(std::istream& in, const char magic[4]) {
    char got[4];
    if (!in.read(got, 4)) throw io_error(IoCode::Truncated, "while reading magic");
    if (std::memcmp(got, magic, 4) != 0)
        throw io_error(IoCode::BadMagic,
                       "expected " + std::string(magic, 4) + ", got " + std::string(got, 4));
    const uint32_t len = read_u32(in, "header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len)))
        throw io_error(IoCode::Truncated, "while reading header");
    return text;
}

void write_floats(std::ostream& out, const Tensor& t) {
    std::string buf(t.data.size() * 4, '\0');
    for (size_t i = 0; i < t.data.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &t.data[i], 4);
        buf[i * 4 + 0] = static_cast<char>(bits);
        buf[i * 4 + 1] = static_cast<char>(bits >> 8);
        buf[i * 4 + 2] = static_cast<char>(bits >> 16);
        buf[i * 4 + 3] = static_cast<char>(bits >> 24);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_floats(std::istream& in, Tensor& t) {
    std::string buf(t.data.size() * 4, '\0');
    if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())))
        throw io_error(IoCode::Truncated, "while reading float payload");
    for (size_t i = 0; i < t.data.size(); ++i) {
        const uint32_t bits = static_cast<uint32_t>(static_cast<unsigned char>(buf[i * 4 + 0])) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(buf[i * 4 + 1])) << 8) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(buf[i * 4 + 2])) << 16) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(buf[i * 4 + 3])) << 24);
        std::memcpy(&t.data[i], &bits, 4);
    }
}

uint64_t fnv1a64(const unsigned char* data, size_t n) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

void digest_floats(uint64_t& h, const Tensor& t) {
    for (float v : t.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int s = 0; s < 32; s += 8) {
            h ^= (bits >> s) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
}

std::string digest_hex(uint64_t h) {
    static const char* hexd = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = hexd[h &  0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace wire

json layer_to_json(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv:
            return json{{"type", "conv"},     {"out", l.out_channels}, {"kh", l.kh},
                        {"kw", l.kw},         {"stride", l.stride},    {"pad", l.pad},
                        {"groups", l.groups}};
        case LayerKind::MaxPool:
            return json{{"type", "maxpool"}, {"window", l.window}, {"stride", l.stride}};
        case LayerKind::ReLU:
            return json{{"type", "relu"}};
        case LayerKind::Flatten:
            return json{{"type", "flatten"}};
        case LayerKind::Dense:
            return json{{"type", "dense"}, {"out", l.out_features}};
    }
    throw std::logic_error("unreachable layer kind");
}

LayerSpec layer_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv")
        return LayerSpec::conv(j.at("out").get<int>(), j.at("kh").get<int>(), j.at("kw").get<int>(),
                               j.at("stride").get<int>(), j.at("pad").get<int>(),
                               j.at("groups").get<int>());
    if (type == "maxpool")
        return LayerSpec::maxpool(j.at("window").get<int>(), j.at("stride").get<int>());
    if (type == "relu") return LayerSpec::relu();
    if (type == "flatten") return LayerSpec::flatten();
    if (type == "dense") return LayerSpec::dense(j.at("out").get<int>());
    throw io_error(IoCode::ShapeMismatch, "unknown layer type '" + type + "'");
}

json spec_to_json(const NetSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& l : spec.layers) layers.push_back(layer_to_json(l));
    return json{{"input_shape", spec.input_shape}, {"layers", layers}};
}

NetSpec spec_from_json(const json& j) {
    std::vector<LayerSpec> layers;
    for (const json& lj : j.at("layers")) layers.push_back(layer_from_json(lj));
    return NetSpec::build(std::move(layers), j.at("input_shape").get<std::vector<int>>());
}

json stage_to_json(const PrunedStage& stage) {
    json filters = json::array();
    for (const PrunedFilter& f : stage.filters)
        filters.push_back({{"src", f.source_index}, {"in", f.in_channels}});
    json post = json::array();
    for (const LayerSpec& l : stage.post) post.push_back(layer_to_json(l));
    return {{"kh", stage.kh},   {"kw", stage.kw}, {"stride", stage.stride},
            {"pad", stage.pad}, {"post", post},   {"filters", filters}};
}

PrunedStage stage_from_json(const json& j) {
    PrunedStage stage;
    stage.kh = j.at("kh").get<int>();
    stage.kw = j.at("kw").get<int>();
    stage.stride = j.at("stride").get<int>();
    stage.pad = j.at("pad").get<int>();
    if (stage.kh <= 0 || stage.kw <= 0 || stage.stride <= 0 || stage.pad < 0)
        throw io_error(IoCode::ShapeMismatch, "stored stage has invalid geometry");
    for (const json& lj : j.at("post")) {
        LayerSpec l = layer_from_json(lj);
        if (l.kind != LayerKind::ReLU && l.kind != LayerKind::MaxPool)
            throw io_error(IoCode::ShapeMismatch, "stored stage has unsupported trailing layer");
        stage.post.push_back(l);
    }
    for (const json& fj : j.at("filters")) {
        PrunedFilter f;
        f.source_index = fj.at("src").get<int>();
        f.in_channels = fj.at("in").get<std::vector<int>>();
        if (f.in_channels.empty() || !std::is_sorted(f.in_channels.begin(), f.in_channels.end()))
            throw io_error(IoCode::ShapeMismatch, "stored filter has invalid channel list");
        stage.filters.push_back(std::move(f));
    }
    if (stage.filters.empty())
        throw io_error(IoCode::ShapeMismatch, "stored stage has no filters");
    return stage;
}

std::string spec_digest(const NetSpec& spec) {
    const std::string text = spec_to_json(spec).dump();
    return wire::digest_hex(
        wire::fnv1a64(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

static const char kNetMagic[4] = {'C', 'N', 'N', '1'};

const char* net_magic() { return kNetMagic; }

std::vector<const Tensor*> net_param_payload(const NetParams& params) {
    std::vector<const Tensor*> out;
    for (const ConvKernels& k : params.conv) {
        out.push_back(&k.weights);
        out.push_back(&k.bias);
    }
    for (const DenseParams& d : params.dense) {
        out.push_back(&d.weights);
        out.push_back(&d.bias);
    }
    return out;
}

std::vector<Tensor*> net_param_payload(NetParams& params) {
    std::vector<Tensor*> out;
    for (ConvKernels& k : params.conv) {
        out.push_back(&k.weights);
        out.push_back(&k.bias);
    }
    for (DenseParams& d : params.dense) {
        out.push_back(&d.weights);
        out.push_back(&d.bias);
    }
    return out;
}

void save_net(const NetSpec& spec, const NetParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    json shapes = json::array();
    for (const Tensor* t : net_param_payload(params)) shapes.push_back(t->shape);
    const json header = {{"kind", "plain"},
                         {"spec", spec_to_json(spec)},
                         {"shapes", shapes},
                         {"seed", params.rng_seed}};
    wire::write_header(out, kNetMagic, header.dump());
    for (const Tensor* t : net_param_payload(params)) wire::write_floats(out, *t);
    if (!out) throw std::runtime_error("write failure on " + path);
}

std::pair<NetSpec, NetParams> load_net(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(IoCode::Truncated, "cannot open " + path);
    const json header = json::parse(wire::read_header(in, kNetMagic));
    const std::string kind = header.at("kind").get<std::string>();
    if (kind != "plain")
        throw io_error(IoCode::WrongKind, "expected a plain network, file holds '" + kind + "'");

    NetSpec spec = spec_from_json(header.at("spec"));
    NetParams params = alloc_net_params(spec);
    params.rng_seed = header.at("seed").get<uint64_t>();

    std::vector<Tensor*> payload = net_param_payload(params);
    const json& shapes = header.at("shapes");
    if (shapes.size() != payload.size())
        throw io_error(IoCode::ShapeMismatch, "shape table has " + std::to_string(shapes.size()) +
                                                  " entries, spec implies " +
                                                  std::to_string(payload.size()));
    for (size_t i = 0; i < payload.size(); ++i)
        if (shapes[i].get<std::vector<int>>() != payload[i]->shape)
            throw io_error(IoCode::ShapeMismatch,
                           "shape table entry " + std::to_string(i) + " does not match spec");
    for (Tensor* t : payload) wire::read_floats(in, *t);
    return {std::move(spec), std::move(params)};
}

std::string peek_net_kind(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(IoCode::Truncated, "cannot open " + path);
    const json header = json::parse(wire::read_header(in, kNetMagic));
    return header.at("kind").get<std::string>();
}

}  // namespace bft
