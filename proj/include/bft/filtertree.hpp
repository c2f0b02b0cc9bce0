#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bft/net.hpp"
#include "bft/tensor.hpp"

namespace bft {

// Identifies one filter: conv layer l in 1..L (1-based), filter index within that layer.
struct FilterId {
    int layer = 0;
    int index = 0;
    bool operator==(const FilterId& o) const { return layer == o.layer && index == o.index; }
};

// Channel dependencies between consecutive conv layers. deps[l-2][j] lists, in
// ascending order, the layer-(l-1) filter indices read by filter j of conv layer l
// (l in 2..L). Intervening ReLU/MaxPool layers are channel-preserving and do not
// appear; any other layer kind between two convs is rejected.
struct ChannelDepGraph {
    int num_conv_layers = 0;
    std::vector<std::vector<std::vector<int>>> deps;
};

ChannelDepGraph build_dep_graph(const NetSpec& spec);

// One filter retained inside a pruned stage. `in_channels` holds the absolute
// indices of the previous layer's filters (or input channels, for stage 1) that
// this filter reads, in ascending order; weights row c corresponds to
// in_channels[c]. Keeping the list sorted pins the accumulation order so that a
// pruned filter, replayed anywhere, reproduces the source arithmetic bit for bit.
struct PrunedFilter {
    int source_index = 0;
    float bias = 0.0f;
    std::vector<int> in_channels;
    Tensor weights;  // [|in_channels|, kh, kw]

    bool operator==(const PrunedFilter& o) const {
        return source_index == o.source_index && bias == o.bias && in_channels == o.in_channels &&
               weights == o.weights;
    }
};

// A pruned conv layer plus the channel-preserving layers that follow it (up to,
// not including, the next conv). Filters are sorted by source_index.
struct PrunedStage {
    int kh = 0, kw = 0, stride = 1, pad = 0;
    std::vector<PrunedFilter> filters;
    std::vector<LayerSpec> post;

    bool operator==(const PrunedStage& o) const {
        return kh == o.kh && kw == o.kw && stride == o.stride && pad == o.pad &&
               filters == o.filters && post == o.post;
    }
};

// The backward-reachable closure under one apex filter: stages 1..k, where stage
// k holds exactly the apex filter and no trailing `post` layers (the stage-k
// nonlinearity belongs to the consumer).
struct FilterTree {
    std::string source_id;
    FilterId apex;
    std::vector<int> input_shape;  // [C,H,W]
    std::vector<PrunedStage> stages;

    bool operator==(const FilterTree& o) const {
        return source_id == o.source_id && apex == o.apex && input_shape == o.input_shape &&
               stages == o.stages;
    }
};

FilterTree extract_tree(const NetSpec& spec, const NetParams& params, const std::string& source_id,
                        FilterId apex);

// Source-layer indices retained at conv layer `layer` (1..k), ascending.
std::vector<int> retained_at(const FilterTree& tree, int layer);

// Runs one pruned conv stage. `prev_layout` lists, ascending, the absolute
// previous-layer indices present as channels of `input` (channel c of `input`
// holds previous-layer unit prev_layout[c]).
Tensor pruned_conv_forward(const PrunedStage& stage, const Tensor& input,
                           const std::vector<int>& prev_layout);

// Applies a stage's trailing ReLU/MaxPool layers to a [C,H,W] map.
Tensor apply_post(const PrunedStage& stage, const Tensor& input);

// Apex pre-activation map [1,H',W'] for a source-shaped input.
Tensor tree_forward(const FilterTree& tree, const Tensor& input);

// Materializes the tree as a standalone network whose layer-l channel c is the
// tree's retained filter c of stage l. Kernels are widened to read every channel
// of the compacted previous layer, with zero weights where the tree has no edge.
std::pair<NetSpec, NetParams> tree_to_net(const FilterTree& tree);

}  // namespace bft
