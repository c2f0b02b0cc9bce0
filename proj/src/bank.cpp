#include "bft/bank.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "bft/rng.hpp"
#include "bft/serial.hpp"

namespace bft {

using nlohmann::json;

namespace {

constexpr char kBankMagic[4] = {'B', 'F', 'T', '1'};
constexpr uint32_t kBankVersion = 1;

}  // namespace

FilterBank build_bank(const std::vector<SourceNet>& sources, int k) {
    if (sources.empty()) throw std::invalid_argument("build_bank: no sources");
    if (k < 1) throw std::invalid_argument("build_bank: apex layer must be >= 1");
    FilterBank bank;
    bank.apex_layer = k;
    bank.input_shape = sources.front().spec.input_shape;
    std::set<std::string> seen;
    for (const SourceNet& s : sources) {
        if (!seen.insert(s.source_id).second)
            throw std::invalid_argument("build_bank: duplicate source id '" + s.source_id + "'");
        if (s.spec.input_shape != bank.input_shape)
            throw std::invalid_argument("build_bank: sources have mixed input shapes");
        if (s.spec.num_conv_layers() < k)
            throw std::invalid_argument("build_bank: apex layer exceeds depth of source '" +
                                        s.source_id + "'");
        bank.sources.push_back({s.source_id, spec_digest(s.spec), s.task_label});
        const int n = s.spec.conv_filter_counts[static_cast<size_t>(k - 1)];
        for (int j = 0; j < n; ++j)
            bank.entries.push_back(extract_tree(s.spec, s.params, s.source_id, {k, j}));
    }
    return bank;
}

Selection sample(const FilterBank& bank, int n, uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("sample: non-positive sample size");
    if (n > static_cast<int>(bank.entries.size()))
        throw std::invalid_argument("sample: sample size " + std::to_string(n) +
                                    " exceeds bank capacity " +
                                    std::to_string(bank.entries.size()));
    Rng rng(mix64(seed));
    return {sample_without_replacement(static_cast<int>(bank.entries.size()), n, rng), seed};
}

void save_bank(const FilterBank& bank, const std::string& path) {
    // digest first, so the header can carry it ahead of the payload
    uint64_t h = wire::fnv1a64(nullptr, 0);
    for (const FilterTree& tree : bank.entries) {
        for (const PrunedStage& stage : tree.stages) {
            for (const PrunedFilter& f : stage.filters) wire::digest_floats(h, f.weights);
            Tensor biases({static_cast<int>(stage.filters.size())});
            for (size_t i = 0; i < stage.filters.size(); ++i)
                biases.data[i] = stage.filters[i].bias;
            wire::digest_floats(h, biases);
        }
    }

    json sources = json::array();
    for (const SourceInfo& s : bank.sources)
        sources.push_back({{"id", s.source_id}, {"spec_digest", s.spec_digest}, {"task", s.task_label}});
    json entries = json::array();
    for (const FilterTree& tree : bank.entries) {
        json stages = json::array();
        for (const PrunedStage& stage : tree.stages) stages.push_back(stage_to_json(stage));
        entries.push_back(
            {{"source", tree.source_id}, {"apex_index", tree.apex.index}, {"stages", stages}});
    }
    json header = {{"apex_layer", bank.apex_layer},
                   {"input_shape", bank.input_shape},
                   {"sources", sources},
                   {"entries", entries},
                   {"payload_digest", wire::digest_hex(h)}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_bank: cannot open '" + path + "' for writing");
    out.write(kBankMagic, 4);
    wire::write_u32(out, kBankVersion);
    const std::string text = header.dump();
    wire::write_u32(out, static_cast<uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const FilterTree& tree : bank.entries) {
        for (const PrunedStage& stage : tree.stages) {
            for (const PrunedFilter& f : stage.filters) wire::write_floats(out, f.weights);
            Tensor biases({static_cast<int>(stage.filters.size())});
            for (size_t i = 0; i < stage.filters.size(); ++i)
                biases.data[i] = stage.filters[i].bias;
            wire::write_floats(out, biases);
        }
    }
    if (!out) throw std::runtime_error("save_bank: write to '" + path + "' failed");
}

FilterBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_bank: cannot open '" + path + "'");
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4) throw io_error(IoCode::Truncated, "bank file shorter than magic");
    if (!std::equal(magic, magic + 4, kBankMagic))
        throw io_error(IoCode::BadMagic, "not a bank file: '" + path + "'");
    const uint32_t version = wire::read_u32(in, "bank version");
    if (version != kBankVersion)
        throw io_error(IoCode::VersionMismatch,
                       "bank version " + std::to_string(version) + ", expected " +
                           std::to_string(kBankVersion));
    const uint32_t len = wire::read_u32(in, "bank header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len))
        throw io_error(IoCode::Truncated, "bank header shorter than declared");
    const json header = json::parse(text);

    FilterBank bank;
    bank.apex_layer = header.at("apex_layer").get<int>();
    bank.input_shape = header.at("input_shape").get<std::vector<int>>();
    if (bank.apex_layer < 1 || bank.input_shape.size() != 3)
        throw io_error(IoCode::ShapeMismatch, "bank header has invalid geometry");
    std::set<std::string> source_ids;
    for (const json& sj : header.at("sources")) {
        SourceInfo s{sj.at("id").get<std::string>(), sj.at("spec_digest").get<std::string>(),
                     sj.at("task").get<std::string>()};
        if (!source_ids.insert(s.source_id).second)
            throw io_error(IoCode::ShapeMismatch, "bank header repeats a source id");
        bank.sources.push_back(std::move(s));
    }
    std::set<std::pair<std::string, int>> seen_apex;
    for (const json& ej : header.at("entries")) {
        FilterTree tree;
        tree.source_id = ej.at("source").get<std::string>();
        if (!source_ids.count(tree.source_id))
            throw io_error(IoCode::ShapeMismatch, "bank entry references unknown source");
        tree.apex = {bank.apex_layer, ej.at("apex_index").get<int>()};
        if (!seen_apex.insert({tree.source_id, tree.apex.index}).second)
            throw io_error(IoCode::ShapeMismatch, "bank repeats a (source, apex) pair");
        tree.input_shape = bank.input_shape;
        for (const json& sj : ej.at("stages")) tree.stages.push_back(stage_from_json(sj));
        if (static_cast<int>(tree.stages.size()) != bank.apex_layer)
            throw io_error(IoCode::ShapeMismatch, "bank entry stage count != apex layer");
        if (tree.stages.back().filters.size() != 1)
            throw io_error(IoCode::ShapeMismatch, "bank entry apex stage must hold one filter");
        if (tree.stages.back().filters[0].source_index != tree.apex.index)
            throw io_error(IoCode::ShapeMismatch, "bank entry apex filter/index disagree");
        bank.entries.push_back(std::move(tree));
    }

    uint64_t h = wire::fnv1a64(nullptr, 0);
    for (FilterTree& tree : bank.entries) {
        for (PrunedStage& stage : tree.stages) {
            for (PrunedFilter& f : stage.filters) {
                f.weights = Tensor({static_cast<int>(f.in_channels.size()), stage.kh, stage.kw});
                wire::read_floats(in, f.weights);
                wire::digest_floats(h, f.weights);
            }
            Tensor biases({static_cast<int>(stage.filters.size())});
            wire::read_floats(in, biases);
            wire::digest_floats(h, biases);
            for (size_t i = 0; i < stage.filters.size(); ++i)
                stage.filters[i].bias = biases.data[i];
        }
    }
    if (wire::digest_hex(h) != header.at("payload_digest").get<std::string>())
        throw io_error(IoCode::DigestMismatch, "bank payload digest does not match header");
    return bank;
}

}  // namespace bft
