#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bft/bank.hpp"
#include "bft/filtertree.hpp"
#include "bft/net.hpp"
#include "bft/train.hpp"

namespace bft {

// Layers 1..k-1 of one source, restricted to the union of the retained sets of
// that source's selected trees. Channel layouts stay in ascending source order,
// so every selected tree's arithmetic replays inside the branch unchanged.
struct Branch {
    std::string source_id;
    std::vector<PrunedStage> stages;  // empty when the apex layer is 1

    bool operator==(const Branch&) const = default;
};

// One selected tree's apex filter, wired to read its branch's output channels.
struct ApexEntry {
    int branch = 0;
    int kh = 0, kw = 0, stride = 1, pad = 0;
    PrunedFilter filter;

    bool operator==(const ApexEntry&) const = default;
};

// Frozen fused prefix: per-source branches plus one apex filter per selected
// tree. Output channel i (selection order) reproduces tree i exactly.
struct AssembledPrefix {
    int apex_layer = 0;
    std::vector<int> input_shape;  // [C,H,W]
    std::vector<Branch> branches;
    std::vector<ApexEntry> apexes;

    bool operator==(const AssembledPrefix&) const = default;
};

// Fuses trees into branches (one per distinct source, in order of first
// appearance) and maps each apex onto its branch's union layout.
AssembledPrefix fuse_trees(const std::vector<FilterTree>& trees);
AssembledPrefix fuse(const FilterBank& bank, const Selection& selection);

// [n, H', W'] where n = |apexes|; channel i equals tree_forward of tree i.
Tensor prefix_forward(const AssembledPrefix& prefix, const Tensor& input);

// Shape of prefix_forward's output.
std::vector<int> prefix_output_shape(const AssembledPrefix& prefix);

// Stored parameter scalars (weights + biases) across branches and apexes.
int64_t prefix_param_count(const AssembledPrefix& prefix);

// Frozen prefix + trainable head. Only head_params ever changes.
struct TargetNet {
    AssembledPrefix prefix;
    NetSpec head_spec;  // input_shape == prefix output shape
    NetParams head_params;
};

// Head built from tail layers on the prefix output shape, He-initialized from
// `seed`. The strict overload requires head_spec.input_shape to already match.
TargetNet assemble_target(const AssembledPrefix& prefix, const std::vector<LayerSpec>& head_layers,
                          uint64_t seed);
TargetNet assemble_target(const AssembledPrefix& prefix, const NetSpec& head_spec, uint64_t seed);

Tensor target_forward(const TargetNet& target, const Tensor& input);

// Trains the head on prefix features (computed once per example — the prefix
// is frozen, so features never change). Evals run against eval_set features.
TrainHistory train_target(TargetNet& target, const LabeledSet& train_set,
                          const LabeledSet& eval_set, const Hyper& hyper);

double target_accuracy(const TargetNet& target, const LabeledSet& set);

// Conventional transfer baseline: layers 1..k of one source, verbatim, as a
// single-branch frozen prefix; the head mirrors the source's remaining layers
// and is freshly initialized from head_seed.
TargetNet network_transfer_init(const NetSpec& spec, const NetParams& params, int k,
                                uint64_t head_seed, const std::string& source_id = "source");

// Reorders conv layer `layer`'s filters so that new filter i is old filter
// perm[i]. In consistent mode the next conv layer's input channels are
// re-gathered to leave the network function unchanged (permutations that cross
// group boundaries, in that layer or the next, are rejected); otherwise
// downstream weights are left untouched.
NetParams shuffle_filters(const NetSpec& spec, const NetParams& params, int layer,
                          const std::vector<int>& perm, bool consistent);

// ".cnn" container, target flavor: frozen prefix structure + head.
void save_target(const TargetNet& target, const std::string& path);
TargetNet load_target(const std::string& path);

}  // namespace bft
