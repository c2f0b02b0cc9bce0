#include "bft/filtertree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "bft/ops.hpp"

namespace bft {

namespace {

// Absolute indices (previous conv layer's filters, or input channels when l==1)
// read by filter j of conv layer l. Contiguous group slice, so ascending.
std::vector<int> filter_inputs(const NetSpec& spec, int l, int j) {
    const LayerSpec& conv = spec.layers[static_cast<size_t>(spec.conv_positions[static_cast<size_t>(l - 1)])];
    const int prev =
        l == 1 ? spec.input_shape[0] : spec.conv_filter_counts[static_cast<size_t>(l - 2)];
    const int opg = conv.out_channels / conv.groups;
    const int ipg = prev / conv.groups;
    std::vector<int> in(static_cast<size_t>(ipg));
    std::iota(in.begin(), in.end(), (j / opg) * ipg);
    return in;
}

}  // namespace

ChannelDepGraph build_dep_graph(const NetSpec& spec) {
    const int L = spec.num_conv_layers();
    if (L == 0) throw std::invalid_argument("build_dep_graph: network has no conv layers");
    for (int l = 1; l < L; ++l) {
        for (int pos = spec.conv_positions[static_cast<size_t>(l - 1)] + 1;
             pos < spec.conv_positions[static_cast<size_t>(l)]; ++pos) {
            const LayerKind kind = spec.layers[static_cast<size_t>(pos)].kind;
            if (kind != LayerKind::ReLU && kind != LayerKind::MaxPool)
                throw std::invalid_argument(
                    "build_dep_graph: channel-mixing layer between conv layers is unsupported");
        }
    }
    ChannelDepGraph g;
    g.num_conv_layers = L;
    for (int l = 2; l <= L; ++l) {
        std::vector<std::vector<int>> layer;
        const int n = spec.conv_filter_counts[static_cast<size_t>(l - 1)];
        layer.reserve(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) layer.push_back(filter_inputs(spec, l, j));
        g.deps.push_back(std::move(layer));
    }
    return g;
}

FilterTree extract_tree(const NetSpec& spec, const NetParams& params, const std::string& source_id,
                        FilterId apex) {
    const int L = spec.num_conv_layers();
    if (apex.layer < 1 || apex.layer > L)
        throw std::invalid_argument("extract_tree: apex layer out of bounds");
    const int k = apex.layer;
    if (apex.index < 0 || apex.index >= spec.conv_filter_counts[static_cast<size_t>(k - 1)])
        throw std::invalid_argument("extract_tree: apex filter index out of bounds");
    if (static_cast<int>(params.conv.size()) < L)
        throw std::invalid_argument("extract_tree: params missing conv layers");

    const ChannelDepGraph g = build_dep_graph(spec);

    // backward-reachable closure from the apex
    std::vector<std::vector<int>> retained(static_cast<size_t>(k));
    retained[static_cast<size_t>(k - 1)] = {apex.index};
    for (int l = k; l >= 2; --l) {
        std::vector<char> mark(static_cast<size_t>(spec.conv_filter_counts[static_cast<size_t>(l - 2)]), 0);
        for (int j : retained[static_cast<size_t>(l - 1)])
            for (int d : g.deps[static_cast<size_t>(l - 2)][static_cast<size_t>(j)])
                mark[static_cast<size_t>(d)] = 1;
        std::vector<int>& prev = retained[static_cast<size_t>(l - 2)];
        for (size_t i = 0; i < mark.size(); ++i)
            if (mark[i]) prev.push_back(static_cast<int>(i));
    }

    FilterTree tree;
    tree.source_id = source_id;
    tree.apex = apex;
    tree.input_shape = spec.input_shape;
    tree.stages.reserve(static_cast<size_t>(k));
    for (int l = 1; l <= k; ++l) {
        const LayerSpec& conv =
            spec.layers[static_cast<size_t>(spec.conv_positions[static_cast<size_t>(l - 1)])];
        const ConvKernels& kern = params.conv[static_cast<size_t>(l - 1)];
        kern.validate();
        PrunedStage stage;
        stage.kh = conv.kh;
        stage.kw = conv.kw;
        stage.stride = conv.stride;
        stage.pad = conv.pad;
        if (l < k) {
            for (int pos = spec.conv_positions[static_cast<size_t>(l - 1)] + 1;
                 pos < spec.conv_positions[static_cast<size_t>(l)]; ++pos)
                stage.post.push_back(spec.layers[static_cast<size_t>(pos)]);
        }
        const int ipg = kern.in_channels_per_group;
        const size_t row = static_cast<size_t>(ipg) * stage.kh * stage.kw;
        for (int j : retained[static_cast<size_t>(l - 1)]) {
            PrunedFilter f;
            f.source_index = j;
            f.bias = kern.bias.data[static_cast<size_t>(j)];
            f.in_channels =
                l == 1 ? filter_inputs(spec, 1, j) : g.deps[static_cast<size_t>(l - 2)][static_cast<size_t>(j)];
            f.weights = Tensor({ipg, stage.kh, stage.kw});
            std::copy_n(kern.weights.data.begin() + static_cast<long>(row * static_cast<size_t>(j)),
                        row, f.weights.data.begin());
            stage.filters.push_back(std::move(f));
        }
        tree.stages.push_back(std::move(stage));
    }
    return tree;
}

std::vector<int> retained_at(const FilterTree& tree, int layer) {
    if (layer < 1 || layer > static_cast<int>(tree.stages.size()))
        throw std::invalid_argument("retained_at: layer out of bounds");
    const PrunedStage& stage = tree.stages[static_cast<size_t>(layer - 1)];
    std::vector<int> out;
    out.reserve(stage.filters.size());
    for (const PrunedFilter& f : stage.filters) out.push_back(f.source_index);
    return out;
}

Tensor pruned_conv_forward(const PrunedStage& stage, const Tensor& input,
                           const std::vector<int>& prev_layout) {
    if (input.rank() != 3) throw std::invalid_argument("pruned conv: input must be [C,H,W]");
    if (input.dim(0) != static_cast<int>(prev_layout.size()))
        throw std::invalid_argument("pruned conv: layout size does not match input channels");
    if (stage.stride <= 0) throw std::invalid_argument("pruned conv: non-positive stride");
    const int h = input.dim(1), w = input.dim(2);
    if (h + 2 * stage.pad < stage.kh || w + 2 * stage.pad < stage.kw)
        throw std::invalid_argument("pruned conv: kernel larger than padded input");
    const int oh = (h + 2 * stage.pad - stage.kh) / stage.stride + 1;
    const int ow = (w + 2 * stage.pad - stage.kw) / stage.stride + 1;

    Tensor out({static_cast<int>(stage.filters.size()), oh, ow});
    std::vector<int> pos;  // channel position in `input` per in_channel, reused per filter
    for (size_t fi = 0; fi < stage.filters.size(); ++fi) {
        const PrunedFilter& f = stage.filters[fi];
        const int nin = static_cast<int>(f.in_channels.size());
        require_shape(f.weights, {nin, stage.kh, stage.kw}, "pruned conv: filter weights");
        pos.assign(static_cast<size_t>(nin), 0);
        for (int c = 0; c < nin; ++c) {
            const auto it =
                std::lower_bound(prev_layout.begin(), prev_layout.end(), f.in_channels[static_cast<size_t>(c)]);
            if (it == prev_layout.end() || *it != f.in_channels[static_cast<size_t>(c)])
                throw std::invalid_argument("pruned conv: required channel missing from layout");
            pos[static_cast<size_t>(c)] = static_cast<int>(it - prev_layout.begin());
        }
        const float* wptr = f.weights.data.data();
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stage.stride - stage.pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stage.stride - stage.pad;
                double acc = static_cast<double>(f.bias);
                for (int c = 0; c < nin; ++c) {
                    const float* wrow = wptr + static_cast<size_t>(c) * stage.kh * stage.kw;
                    for (int ky = 0; ky < stage.kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < stage.kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += static_cast<double>(input.at3(pos[static_cast<size_t>(c)], iy, ix)) *
                                   static_cast<double>(wrow[ky * stage.kw + kx]);
                        }
                    }
                }
                out.at3(static_cast<int>(fi), oy, ox) = static_cast<float>(acc);
            }
        }
    }
    ensure_finite(out, "pruned conv");
    return out;
}

Tensor apply_post(const PrunedStage& stage, const Tensor& input) {
    Tensor cur = input;
    for (const LayerSpec& layer : stage.post) {
        switch (layer.kind) {
            case LayerKind::ReLU: cur = relu(cur); break;
            case LayerKind::MaxPool: cur = maxpool2d(cur, layer.window, layer.stride); break;
            default: throw std::invalid_argument("apply_post: unsupported stage layer");
        }
    }
    return cur;
}

Tensor tree_forward(const FilterTree& tree, const Tensor& input) {
    require_shape(input, tree.input_shape, "tree_forward: input");
    if (tree.stages.empty()) throw std::invalid_argument("tree_forward: empty tree");
    std::vector<int> layout(static_cast<size_t>(tree.input_shape[0]));
    std::iota(layout.begin(), layout.end(), 0);
    Tensor cur = input;
    for (size_t s = 0; s < tree.stages.size(); ++s) {
        const PrunedStage& stage = tree.stages[s];
        cur = pruned_conv_forward(stage, cur, layout);
        if (s + 1 < tree.stages.size()) {
            cur = apply_post(stage, cur);
            layout.clear();
            for (const PrunedFilter& f : stage.filters) layout.push_back(f.source_index);
        }
    }
    return cur;
}

std::pair<NetSpec, NetParams> tree_to_net(const FilterTree& tree) {
    if (tree.stages.empty()) throw std::invalid_argument("tree_to_net: empty tree");
    std::vector<LayerSpec> layers;
    NetParams params;
    int prev_channels = tree.input_shape[0];
    std::vector<int> prev_layout(static_cast<size_t>(prev_channels));
    std::iota(prev_layout.begin(), prev_layout.end(), 0);
    for (const PrunedStage& stage : tree.stages) {
        const int nout = static_cast<int>(stage.filters.size());
        layers.push_back(LayerSpec::conv(nout, stage.kh, stage.kw, stage.stride, stage.pad, 1));
        for (const LayerSpec& p : stage.post) layers.push_back(p);

        ConvKernels kern;
        kern.out_channels = nout;
        kern.in_channels_per_group = prev_channels;
        kern.kh = stage.kh;
        kern.kw = stage.kw;
        kern.groups = 1;
        kern.weights = Tensor({nout, prev_channels, stage.kh, stage.kw});
        kern.bias = Tensor({nout});
        const size_t plane = static_cast<size_t>(stage.kh) * stage.kw;
        for (int o = 0; o < nout; ++o) {
            const PrunedFilter& f = stage.filters[static_cast<size_t>(o)];
            kern.bias.data[static_cast<size_t>(o)] = f.bias;
            for (size_t c = 0; c < f.in_channels.size(); ++c) {
                const auto it =
                    std::lower_bound(prev_layout.begin(), prev_layout.end(), f.in_channels[c]);
                if (it == prev_layout.end() || *it != f.in_channels[c])
                    throw std::invalid_argument("tree_to_net: channel missing from layout");
                const size_t dst =
                    ((static_cast<size_t>(o) * prev_channels) + static_cast<size_t>(it - prev_layout.begin())) * plane;
                std::copy_n(f.weights.data.begin() + static_cast<long>(c * plane), plane,
                            kern.weights.data.begin() + static_cast<long>(dst));
            }
        }
        params.conv.push_back(std::move(kern));

        prev_channels = nout;
        prev_layout.clear();
        for (const PrunedFilter& f : stage.filters) prev_layout.push_back(f.source_index);
    }
    NetSpec spec = NetSpec::build(std::move(layers), tree.input_shape);
    return {std::move(spec), std::move(params)};
}

}  // namespace bft
