#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "bft/ops.hpp"
#include "bft/tensor.hpp"

namespace bft {

enum class LayerKind { Conv, MaxPool, ReLU, Flatten, Dense };

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    // Conv
    int out_channels = 0, kh = 0, kw = 0, pad = 0, groups = 1;
    // Conv and MaxPool
    int stride = 1;
    // MaxPool
    int window = 0;
    // Dense
    int out_features = 0;

    static LayerSpec conv(int out_channels, int kh, int kw, int stride, int pad, int groups = 1);
    static LayerSpec maxpool(int window, int stride);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec dense(int out_features);

    bool operator==(const LayerSpec&) const = default;
};

// Ordered layer descriptors plus everything derivable from them. Conv layers
// are indexed 1..L in order of appearance; build() validates the whole shape
// chain at construction.
struct NetSpec {
    std::vector<LayerSpec> layers;
    std::vector<int> input_shape;  // [C,H,W]

    // derived by build()
    std::vector<std::vector<int>> output_shapes;  // per layer
    std::vector<int> conv_positions;              // conv index l (1-based) -> layers[] position
    std::vector<int> conv_filter_counts;          // N^1..N^L
    std::vector<int> dense_positions;
    std::vector<int> dense_in_features;

    static NetSpec build(std::vector<LayerSpec> layers, std::vector<int> input_shape);

    int num_conv_layers() const { return static_cast<int>(conv_positions.size()); }
    int num_dense_layers() const { return static_cast<int>(dense_positions.size()); }
    const std::vector<int>& final_shape() const {
        return layers.empty() ? input_shape : output_shapes.back();
    }
    // 1-based conv index of a layers[] position, or 0 if not a conv layer
    int conv_index_of_position(int pos) const;

    bool operator==(const NetSpec&) const = default;
};

struct DenseParams {
    Tensor weights;  // [out, in]
    Tensor bias;     // [out]
};

struct NetParams {
    std::vector<ConvKernels> conv;   // by conv index (0-based: conv layer l is conv[l-1])
    std::vector<DenseParams> dense;  // by dense order
    uint64_t rng_seed = 0;
};

// Zero-filled parameter tensors with the shapes the spec implies.
NetParams alloc_net_params(const NetSpec& spec);

// He initialization: weights ~ N(0, 2/fan_in), biases zero, fully determined
// by the seed.
NetParams init_net(const NetSpec& spec, uint64_t seed);

struct ForwardResult {
    Tensor logits;
    // conv index -> that conv layer's own output map (before any following
    // ReLU/pool layer), for the requested indices
    std::map<int, Tensor> captured;
};

ForwardResult forward(const NetSpec& spec, const NetParams& params, const Tensor& input,
                      const std::set<int>& capture = {});

// Gradient tensors aligned with NetParams; tensors for conv layers at or
// below the frozen depth are left empty.
struct NetGrads {
    std::vector<Tensor> conv_w, conv_b;
    std::vector<Tensor> dense_w, dense_b;
};

// Single-example loss and parameter gradients. Conv layers 1..frozen_prefix_depth
// get no gradients; backpropagation stops below the shallowest trainable layer.
float loss_and_grads(const NetSpec& spec, const NetParams& params, const Tensor& input, int label,
                     int frozen_prefix_depth, NetGrads& grads);

// Desk-scale reference architecture: 5 conv stages + 2 dense layers on
// 1x28x28 inputs.
NetSpec snet_spec(int num_classes);

// Layers strictly after conv layer k (starting with conv-k's own ReLU/pool
// stage tail).
std::vector<LayerSpec> tail_after_conv(const NetSpec& spec, int k);

}  // namespace bft
