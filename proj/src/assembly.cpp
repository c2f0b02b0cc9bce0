#include "bft/assembly.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

#include "bft/parallel.hpp"
#include "bft/serial.hpp"

namespace bft {

using nlohmann::json;

namespace {

std::pair<int, int> branch_spatial(const AssembledPrefix& prefix, const Branch& branch) {
    int h = prefix.input_shape[1], w = prefix.input_shape[2];
    for (const PrunedStage& s : branch.stages) {
        if (h + 2 * s.pad < s.kh || w + 2 * s.pad < s.kw)
            throw std::invalid_argument("prefix: stage kernel larger than its padded input");
        h = (h + 2 * s.pad - s.kh) / s.stride + 1;
        w = (w + 2 * s.pad - s.kw) / s.stride + 1;
        for (const LayerSpec& p : s.post) {
            if (p.kind != LayerKind::MaxPool) continue;
            if (p.window > h || p.window > w)
                throw std::invalid_argument("prefix: pool window larger than its input");
            h = (h - p.window) / p.stride + 1;
            w = (w - p.window) / p.stride + 1;
        }
    }
    return {h, w};
}

LabeledSet prefix_features(const AssembledPrefix& prefix, const LabeledSet& set) {
    LabeledSet out;
    out.labels = set.labels;
    out.num_classes = set.num_classes;
    out.images.resize(set.images.size());
    parallel_for(static_cast<int>(set.images.size()), [&](int i) {
        out.images[static_cast<size_t>(i)] = prefix_forward(prefix, set.images[static_cast<size_t>(i)]);
    });
    return out;
}

}  // namespace

std::vector<int> prefix_output_shape(const AssembledPrefix& prefix) {
    if (prefix.apexes.empty()) throw std::invalid_argument("prefix: no apex filters");
    if (prefix.input_shape.size() != 3) throw std::invalid_argument("prefix: bad input shape");
    int oh = -1, ow = -1;
    for (const ApexEntry& e : prefix.apexes) {
        if (e.branch < 0 || e.branch >= static_cast<int>(prefix.branches.size()))
            throw std::invalid_argument("prefix: apex references missing branch");
        const auto [h, w] = branch_spatial(prefix, prefix.branches[static_cast<size_t>(e.branch)]);
        if (h + 2 * e.pad < e.kh || w + 2 * e.pad < e.kw)
            throw std::invalid_argument("prefix: apex kernel larger than its padded input");
        const int eh = (h + 2 * e.pad - e.kh) / e.stride + 1;
        const int ew = (w + 2 * e.pad - e.kw) / e.stride + 1;
        if (oh < 0) {
            oh = eh;
            ow = ew;
        } else if (eh != oh || ew != ow) {
            throw std::invalid_argument("fuse: selected trees produce mismatched output maps");
        }
    }
    return {static_cast<int>(prefix.apexes.size()), oh, ow};
}

AssembledPrefix fuse_trees(const std::vector<FilterTree>& trees) {
    if (trees.empty()) throw std::invalid_argument("fuse: empty selection");
    const int k = static_cast<int>(trees.front().stages.size());
    if (k < 1) throw std::invalid_argument("fuse: tree without stages");
    for (const FilterTree& t : trees) {
        if (static_cast<int>(t.stages.size()) != k)
            throw std::invalid_argument("fuse: selected trees have mixed apex layers");
        if (t.input_shape != trees.front().input_shape)
            throw std::invalid_argument("fuse: selected trees have mixed input shapes");
        if (t.stages.back().filters.size() != 1)
            throw std::invalid_argument("fuse: tree apex stage must hold exactly one filter");
    }

    AssembledPrefix prefix;
    prefix.apex_layer = k;
    prefix.input_shape = trees.front().input_shape;

    // one branch per distinct source, in order of first appearance
    std::vector<std::string> source_order;
    std::map<std::string, std::vector<const FilterTree*>> by_source;
    for (const FilterTree& t : trees) {
        std::vector<const FilterTree*>& group = by_source[t.source_id];
        if (group.empty()) source_order.push_back(t.source_id);
        group.push_back(&t);
    }
    std::map<std::string, int> branch_of;
    for (const std::string& sid : source_order) {
        const std::vector<const FilterTree*>& group = by_source[sid];
        Branch branch;
        branch.source_id = sid;
        for (int s = 0; s < k - 1; ++s) {
            const PrunedStage& first = group.front()->stages[static_cast<size_t>(s)];
            PrunedStage merged;
            merged.kh = first.kh;
            merged.kw = first.kw;
            merged.stride = first.stride;
            merged.pad = first.pad;
            merged.post = first.post;
            std::map<int, const PrunedFilter*> by_index;
            for (const FilterTree* t : group) {
                const PrunedStage& st = t->stages[static_cast<size_t>(s)];
                if (st.kh != first.kh || st.kw != first.kw || st.stride != first.stride ||
                    st.pad != first.pad || !(st.post == first.post))
                    throw std::invalid_argument(
                        "fuse: same-source trees disagree on stage structure");
                for (const PrunedFilter& f : st.filters) {
                    const auto [it, inserted] = by_index.try_emplace(f.source_index, &f);
                    if (!inserted && !(*it->second == f))
                        throw std::invalid_argument("fuse: same-source trees disagree on a filter");
                }
            }
            for (const auto& [idx, f] : by_index) merged.filters.push_back(*f);
            branch.stages.push_back(std::move(merged));
        }
        branch_of[sid] = static_cast<int>(prefix.branches.size());
        prefix.branches.push_back(std::move(branch));
    }

    // apex filters keep Selection order; that order is the output channel order
    for (const FilterTree& t : trees) {
        const PrunedStage& apex_stage = t.stages.back();
        ApexEntry e;
        e.branch = branch_of.at(t.source_id);
        e.kh = apex_stage.kh;
        e.kw = apex_stage.kw;
        e.stride = apex_stage.stride;
        e.pad = apex_stage.pad;
        e.filter = apex_stage.filters.front();
        prefix.apexes.push_back(std::move(e));
    }
    prefix_output_shape(prefix);  // validates apex maps agree
    return prefix;
}

AssembledPrefix fuse(const FilterBank& bank, const Selection& selection) {
    if (selection.entry_indices.empty()) throw std::invalid_argument("fuse: empty selection");
    std::vector<FilterTree> trees;
    trees.reserve(selection.entry_indices.size());
    std::vector<char> seen(bank.entries.size(), 0);
    for (int idx : selection.entry_indices) {
        if (idx < 0 || idx >= static_cast<int>(bank.entries.size()))
            throw std::invalid_argument("fuse: selection index out of range");
        if (seen[static_cast<size_t>(idx)])
            throw std::invalid_argument("fuse: selection repeats an entry");
        seen[static_cast<size_t>(idx)] = 1;
        trees.push_back(bank.entries[static_cast<size_t>(idx)]);
    }
    return fuse_trees(trees);
}

Tensor prefix_forward(const AssembledPrefix& prefix, const Tensor& input) {
    require_shape(input, prefix.input_shape, "prefix_forward: input");
    const std::vector<int> out_shape = prefix_output_shape(prefix);

    std::vector<Tensor> branch_out(prefix.branches.size());
    std::vector<std::vector<int>> layouts(prefix.branches.size());
    std::vector<int> identity(static_cast<size_t>(prefix.input_shape[0]));
    std::iota(identity.begin(), identity.end(), 0);
    for (size_t bi = 0; bi < prefix.branches.size(); ++bi) {
        const Branch& b = prefix.branches[bi];
        Tensor cur = input;
        std::vector<int> layout = identity;
        for (const PrunedStage& s : b.stages) {
            cur = pruned_conv_forward(s, cur, layout);
            cur = apply_post(s, cur);
            layout.clear();
            for (const PrunedFilter& f : s.filters) layout.push_back(f.source_index);
        }
        branch_out[bi] = std::move(cur);
        layouts[bi] = std::move(layout);
    }

    Tensor out(out_shape);
    const size_t plane = static_cast<size_t>(out_shape[1]) * out_shape[2];
    for (size_t i = 0; i < prefix.apexes.size(); ++i) {
        const ApexEntry& e = prefix.apexes[i];
        PrunedStage apex_stage;
        apex_stage.kh = e.kh;
        apex_stage.kw = e.kw;
        apex_stage.stride = e.stride;
        apex_stage.pad = e.pad;
        apex_stage.filters = {e.filter};
        const Tensor ch = pruned_conv_forward(apex_stage, branch_out[static_cast<size_t>(e.branch)],
                                              layouts[static_cast<size_t>(e.branch)]);
        std::copy(ch.data.begin(), ch.data.end(), out.data.begin() + static_cast<long>(i * plane));
    }
    return out;
}

int64_t prefix_param_count(const AssembledPrefix& prefix) {
    int64_t count = 0;
    for (const Branch& b : prefix.branches)
        for (const PrunedStage& s : b.stages)
            for (const PrunedFilter& f : s.filters) count += f.weights.numel() + 1;
    for (const ApexEntry& e : prefix.apexes) count += e.filter.weights.numel() + 1;
    return count;
}

TargetNet assemble_target(const AssembledPrefix& prefix, const NetSpec& head_spec, uint64_t seed) {
    if (head_spec.input_shape != prefix_output_shape(prefix))
        throw std::invalid_argument(
            "assemble_target: head input channels do not match the prefix output");
    return {prefix, head_spec, init_net(head_spec, seed)};
}

TargetNet assemble_target(const AssembledPrefix& prefix, const std::vector<LayerSpec>& head_layers,
                          uint64_t seed) {
    return assemble_target(prefix, NetSpec::build(head_layers, prefix_output_shape(prefix)), seed);
}

Tensor target_forward(const TargetNet& target, const Tensor& input) {
    return forward(target.head_spec, target.head_params, prefix_forward(target.prefix, input))
        .logits;
}

TrainHistory train_target(TargetNet& target, const LabeledSet& train_set,
                          const LabeledSet& eval_set, const Hyper& hyper) {
    const LabeledSet feat_train = prefix_features(target.prefix, train_set);
    const LabeledSet feat_eval = prefix_features(target.prefix, eval_set);
    return train(target.head_spec, target.head_params, 0, feat_train, feat_eval, hyper);
}

double target_accuracy(const TargetNet& target, const LabeledSet& set) {
    return evaluate(target.head_spec, target.head_params, prefix_features(target.prefix, set));
}

TargetNet network_transfer_init(const NetSpec& spec, const NetParams& params, int k,
                                uint64_t head_seed, const std::string& source_id) {
    const int L = spec.num_conv_layers();
    if (k < 1 || k > L)
        throw std::invalid_argument("network_transfer_init: layer depth out of range");
    const int n = spec.conv_filter_counts[static_cast<size_t>(k - 1)];
    std::vector<FilterTree> trees;
    trees.reserve(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) trees.push_back(extract_tree(spec, params, source_id, {k, j}));
    AssembledPrefix prefix = fuse_trees(trees);
    return assemble_target(prefix, tail_after_conv(spec, k), head_seed);
}

NetParams shuffle_filters(const NetSpec& spec, const NetParams& params, int layer,
                          const std::vector<int>& perm, bool consistent) {
    const int L = spec.num_conv_layers();
    if (layer < 1 || layer >= L)
        throw std::invalid_argument("shuffle_filters: layer must name a conv layer below the last");
    if (static_cast<int>(params.conv.size()) < L)
        throw std::invalid_argument("shuffle_filters: params missing conv layers");
    const ConvKernels& src = params.conv[static_cast<size_t>(layer - 1)];
    const int n = src.out_channels;
    if (static_cast<int>(perm.size()) != n)
        throw std::invalid_argument("shuffle_filters: permutation size mismatch");
    std::vector<char> seen(static_cast<size_t>(n), 0);
    for (int v : perm) {
        if (v < 0 || v >= n || seen[static_cast<size_t>(v)])
            throw std::invalid_argument("shuffle_filters: not a permutation");
        seen[static_cast<size_t>(v)] = 1;
    }

    const ConvKernels& next = params.conv[static_cast<size_t>(layer)];
    if (consistent) {
        // a filter may not change group, in this layer or as seen by the next
        const int opg = src.out_channels / src.groups;
        const int ipg = next.in_channels_per_group;
        for (int i = 0; i < n; ++i) {
            if (i / opg != perm[static_cast<size_t>(i)] / opg)
                throw std::invalid_argument(
                    "shuffle_filters: permutation crosses group boundaries (consistent mode)");
            if (i / ipg != perm[static_cast<size_t>(i)] / ipg)
                throw std::invalid_argument(
                    "shuffle_filters: permutation crosses downstream group boundaries "
                    "(consistent mode)");
        }
    }

    NetParams out = params;
    ConvKernels& dst = out.conv[static_cast<size_t>(layer - 1)];
    const size_t row = static_cast<size_t>(src.in_channels_per_group) * src.kh * src.kw;
    for (int i = 0; i < n; ++i) {
        std::copy_n(src.weights.data.begin() + static_cast<long>(row * static_cast<size_t>(perm[static_cast<size_t>(i)])),
                    row, dst.weights.data.begin() + static_cast<long>(row * static_cast<size_t>(i)));
        dst.bias.data[static_cast<size_t>(i)] = src.bias.data[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    if (consistent) {
        ConvKernels& ndst = out.conv[static_cast<size_t>(layer)];
        const int ipg = next.in_channels_per_group;
        const int opg2 = next.out_channels / next.groups;
        const size_t plane = static_cast<size_t>(next.kh) * next.kw;
        for (int o = 0; o < next.out_channels; ++o) {
            const int base = (o / opg2) * ipg;
            for (int c = 0; c < ipg; ++c) {
                const int from = perm[static_cast<size_t>(base + c)] - base;
                std::copy_n(next.weights.data.begin() +
                                static_cast<long>(((static_cast<size_t>(o) * ipg) + static_cast<size_t>(from)) * plane),
                            plane,
                            ndst.weights.data.begin() +
                                static_cast<long>(((static_cast<size_t>(o) * ipg) + static_cast<size_t>(c)) * plane));
            }
        }
    }
    return out;
}

void save_target(const TargetNet& target, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);

    json branches = json::array();
    for (const Branch& b : target.prefix.branches) {
        json stages = json::array();
        for (const PrunedStage& s : b.stages) stages.push_back(stage_to_json(s));
        branches.push_back({{"source", b.source_id}, {"stages", stages}});
    }
    json apexes = json::array();
    for (const ApexEntry& e : target.prefix.apexes)
        apexes.push_back({{"branch", e.branch},
                          {"kh", e.kh},
                          {"kw", e.kw},
                          {"stride", e.stride},
                          {"pad", e.pad},
                          {"src", e.filter.source_index},
                          {"in", e.filter.in_channels}});
    json shapes = json::array();
    for (const Tensor* t : net_param_payload(target.head_params)) shapes.push_back(t->shape);
    const json header = {{"kind", "target"},
                         {"apex_layer", target.prefix.apex_layer},
                         {"input_shape", target.prefix.input_shape},
                         {"branches", branches},
                         {"apexes", apexes},
                         {"head_spec", spec_to_json(target.head_spec)},
                         {"shapes", shapes},
                         {"seed", target.head_params.rng_seed}};
    wire::write_header(out, net_magic(), header.dump());

    for (const Branch& b : target.prefix.branches) {
        for (const PrunedStage& s : b.stages) {
            for (const PrunedFilter& f : s.filters) wire::write_floats(out, f.weights);
            Tensor biases({static_cast<int>(s.filters.size())});
            for (size_t i = 0; i < s.filters.size(); ++i) biases.data[i] = s.filters[i].bias;
            wire::write_floats(out, biases);
        }
    }
    for (const ApexEntry& e : target.prefix.apexes) {
        wire::write_floats(out, e.filter.weights);
        Tensor bias({1});
        bias.data[0] = e.filter.bias;
        wire::write_floats(out, bias);
    }
    for (const Tensor* t : net_param_payload(target.head_params)) wire::write_floats(out, *t);
    if (!out) throw std::runtime_error("write failure on " + path);
}

TargetNet load_target(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(IoCode::Truncated, "cannot open " + path);
    const json header = json::parse(wire::read_header(in, net_magic()));
    const std::string kind = header.at("kind").get<std::string>();
    if (kind != "target")
        throw io_error(IoCode::WrongKind, "expected a target network, file holds '" + kind + "'");

    TargetNet target;
    target.prefix.apex_layer = header.at("apex_layer").get<int>();
    target.prefix.input_shape = header.at("input_shape").get<std::vector<int>>();
    if (target.prefix.apex_layer < 1 || target.prefix.input_shape.size() != 3)
        throw io_error(IoCode::ShapeMismatch, "target header has invalid geometry");
    for (const json& bj : header.at("branches")) {
        Branch b;
        b.source_id = bj.at("source").get<std::string>();
        for (const json& sj : bj.at("stages")) b.stages.push_back(stage_from_json(sj));
        if (static_cast<int>(b.stages.size()) != target.prefix.apex_layer - 1)
            throw io_error(IoCode::ShapeMismatch, "target branch depth != apex layer - 1");
        target.prefix.branches.push_back(std::move(b));
    }
    for (const json& aj : header.at("apexes")) {
        ApexEntry e;
        e.branch = aj.at("branch").get<int>();
        e.kh = aj.at("kh").get<int>();
        e.kw = aj.at("kw").get<int>();
        e.stride = aj.at("stride").get<int>();
        e.pad = aj.at("pad").get<int>();
        e.filter.source_index = aj.at("src").get<int>();
        e.filter.in_channels = aj.at("in").get<std::vector<int>>();
        if (e.branch < 0 || e.branch >= static_cast<int>(target.prefix.branches.size()))
            throw io_error(IoCode::ShapeMismatch, "target apex references missing branch");
        if (e.kh <= 0 || e.kw <= 0 || e.stride <= 0 || e.pad < 0 || e.filter.in_channels.empty())
            throw io_error(IoCode::ShapeMismatch, "target apex has invalid geometry");
        target.prefix.apexes.push_back(std::move(e));
    }

    target.head_spec = spec_from_json(header.at("head_spec"));
    target.head_params = alloc_net_params(target.head_spec);
    target.head_params.rng_seed = header.at("seed").get<uint64_t>();
    std::vector<Tensor*> payload = net_param_payload(target.head_params);
    const json& shapes = header.at("shapes");
    if (shapes.size() != payload.size())
        throw io_error(IoCode::ShapeMismatch, "target head shape table size mismatch");
    for (size_t i = 0; i < payload.size(); ++i)
        if (shapes[i].get<std::vector<int>>() != payload[i]->shape)
            throw io_error(IoCode::ShapeMismatch,
                           "target head shape entry " + std::to_string(i) + " does not match");

    for (Branch& b : target.prefix.branches) {
        for (PrunedStage& s : b.stages) {
            for (PrunedFilter& f : s.filters) {
                f.weights = Tensor({static_cast<int>(f.in_channels.size()), s.kh, s.kw});
                wire::read_floats(in, f.weights);
            }
            Tensor biases({static_cast<int>(s.filters.size())});
            wire::read_floats(in, biases);
            for (size_t i = 0; i < s.filters.size(); ++i) s.filters[i].bias = biases.data[i];
        }
    }
    for (ApexEntry& e : target.prefix.apexes) {
        e.filter.weights =
            Tensor({static_cast<int>(e.filter.in_channels.size()), e.kh, e.kw});
        wire::read_floats(in, e.filter.weights);
        Tensor bias({1});
        wire::read_floats(in, bias);
        e.filter.bias = bias.data[0];
    }
    for (Tensor* t : payload) wire::read_floats(in, *t);

    if (target.head_spec.input_shape != prefix_output_shape(target.prefix))
        throw io_error(IoCode::ShapeMismatch, "target head does not fit the stored prefix");
    return target;
}

}  // namespace bft
