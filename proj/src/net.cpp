#include "bft/net.hpp"

#include <algorithm>

#include "bft/rng.hpp"

namespace bft {

LayerSpec LayerSpec::conv(int out_channels, int kh, int kw, int stride, int pad, int groups) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.out_channels = out_channels;
    s.kh = kh;
    s.kw = kw;
    s.stride = stride;
    s.pad = pad;
    s.groups = groups;
    return s;
}

LayerSpec LayerSpec::maxpool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.window = window;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

LayerSpec LayerSpec::dense(int out_features) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.out_features = out_features;
    return s;
}

NetSpec NetSpec::build(std::vector<LayerSpec> layers, std::vector<int> input_shape) {
    if (input_shape.size() != 3)
        throw std::invalid_argument("net spec: input shape must be [C,H,W]");
    for (int d : input_shape)
        if (d <= 0) throw std::invalid_argument("net spec: non-positive input dimension");

    NetSpec spec;
    spec.layers = std::move(layers);
    spec.input_shape = std::move(input_shape);

    std::vector<int> cur = spec.input_shape;
    for (size_t pos = 0; pos < spec.layers.size(); ++pos) {
        const LayerSpec& l = spec.layers[pos];
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.size() != 3)
                    throw std::invalid_argument("net spec: conv needs a [C,H,W] input");
                if (l.out_channels <= 0 || l.kh <= 0 || l.kw <= 0 || l.stride <= 0 || l.pad < 0 ||
                    l.groups <= 0)
                    throw std::invalid_argument("net spec: bad conv geometry");
                if (cur[0] % l.groups != 0 || l.out_channels % l.groups != 0)
                    throw std::invalid_argument("net spec: channels not divisible by groups");
                if (cur[1] + 2 * l.pad < l.kh || cur[2] + 2 * l.pad < l.kw)
                    throw std::invalid_argument("net spec: conv kernel larger than padded input");
                spec.conv_positions.push_back(static_cast<int>(pos));
                spec.conv_filter_counts.push_back(l.out_channels);
                cur = {l.out_channels, (cur[1] + 2 * l.pad - l.kh) / l.stride + 1,
                       (cur[2] + 2 * l.pad - l.kw) / l.stride + 1};
                break;
            }
            case LayerKind::MaxPool: {
                if (cur.size() != 3)
                    throw std::invalid_argument("net spec: maxpool needs a [C,H,W] input");
                if (l.window <= 0 || l.stride <= 0 || l.window > cur[1] || l.window > cur[2])
                    throw std::invalid_argument("net spec: bad pool geometry");
                cur = {cur[0], (cur[1] - l.window) / l.stride + 1,
                       (cur[2] - l.window) / l.stride + 1};
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::Flatten: {
                int64_t n = 1;
                for (int d : cur) n *= d;
                cur = {static_cast<int>(n)};
                break;
            }
            case LayerKind::Dense: {
                if (cur.size() != 1)
                    throw std::invalid_argument("net spec: dense needs a flattened input");
                if (l.out_features <= 0)
                    throw std::invalid_argument("net spec: bad dense width");
                spec.dense_positions.push_back(static_cast<int>(pos));
                spec.dense_in_features.push_back(cur[0]);
                cur = {l.out_features};
                break;
            }
        }
        spec.output_shapes.push_back(cur);
    }
    return spec;
}

int NetSpec::conv_index_of_position(int pos) const {
    for (size_t l = 0; l < conv_positions.size(); ++l)
        if (conv_positions[l] == pos) return static_cast<int>(l) + 1;
    return 0;
}

NetParams alloc_net_params(const NetSpec& spec) {
    NetParams p;
    int dense_idx = 0;
    for (size_t pos = 0; pos < spec.layers.size(); ++pos) {
        const LayerSpec& l = spec.layers[pos];
        if (l.kind == LayerKind::Conv) {
            const std::vector<int>& in =
                pos == 0 ? spec.input_shape : spec.output_shapes[pos - 1];
            ConvKernels k;
            k.out_channels = l.out_channels;
            k.in_channels_per_group = in[0] / l.groups;
            k.kh = l.kh;
            k.kw = l.kw;
            k.groups = l.groups;
            k.weights = Tensor({k.out_channels, k.in_channels_per_group, k.kh, k.kw});
            k.bias = Tensor({k.out_channels});
            p.conv.push_back(std::move(k));
        } else if (l.kind == LayerKind::Dense) {
            const int in_n = spec.dense_in_features[static_cast<size_t>(dense_idx)];
            DenseParams d;
            d.weights = Tensor({l.out_features, in_n});
            d.bias = Tensor({l.out_features});
            p.dense.push_back(std::move(d));
            ++dense_idx;
        }
    }
    return p;
}

NetParams init_net(const NetSpec& spec, uint64_t seed) {
    NetParams p = alloc_net_params(spec);
    p.rng_seed = seed;
    Rng rng(mix64(seed));
    for (ConvKernels& k : p.conv) {
        const double fan_in = static_cast<double>(k.in_channels_per_group) * k.kh * k.kw;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (float& w : k.weights.data) w = static_cast<float>(rng.normal() * stddev);
    }
    for (DenseParams& d : p.dense) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(d.weights.dim(1)));
        for (float& w : d.weights.data) w = static_cast<float>(rng.normal() * stddev);
    }
    return p;
}

static void check_params_match(const NetSpec& spec, const NetParams& params) {
    if (params.conv.size() != spec.conv_positions.size() ||
        params.dense.size() != spec.dense_positions.size())
        throw std::invalid_argument("net: parameter count does not match spec");
}

ForwardResult forward(const NetSpec& spec, const NetParams& params, const Tensor& input,
                      const std::set<int>& capture) {
    check_params_match(spec, params);
    require_shape(input, spec.input_shape, "forward: input");
    for (int l : capture)
        if (l < 1 || l > spec.num_conv_layers())
            throw std::invalid_argument("forward: capture index out of range");
    ForwardResult res;
    Tensor cur = input;
    int conv_idx = 0, dense_idx = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                cur = conv2d(cur, params.conv[static_cast<size_t>(conv_idx)], l.stride, l.pad);
                ++conv_idx;
                if (capture.count(conv_idx)) res.captured[conv_idx] = cur;
                break;
            }
            case LayerKind::MaxPool:
                cur = maxpool2d(cur, l.window, l.stride);
                break;
            case LayerKind::ReLU:
                cur = relu(cur);
                break;
            case LayerKind::Flatten: {
                const int flat_n = static_cast<int>(cur.numel());
                cur = Tensor({flat_n}, std::move(cur.data));
                break;
            }
            case LayerKind::Dense: {
                const DenseParams& d = params.dense[static_cast<size_t>(dense_idx)];
                cur = dense(cur, d.weights, d.bias);
                ++dense_idx;
                break;
            }
        }
    }
    res.logits = std::move(cur);
    return res;
}

float loss_and_grads(const NetSpec& spec, const NetParams& params, const Tensor& input, int label,
                     int frozen_prefix_depth, NetGrads& grads) {
    check_params_match(spec, params);
    require_shape(input, spec.input_shape, "loss_and_grads: input");
    if (frozen_prefix_depth < 0 || frozen_prefix_depth > spec.num_conv_layers())
        throw std::invalid_argument("loss_and_grads: frozen depth out of range");

    grads.conv_w.assign(params.conv.size(), Tensor());
    grads.conv_b.assign(params.conv.size(), Tensor());
    grads.dense_w.assign(params.dense.size(), Tensor());
    grads.dense_b.assign(params.dense.size(), Tensor());

    // position of the shallowest layer whose parameters still train; input
    // gradients are not propagated below it
    int stop_pos;
    if (frozen_prefix_depth < spec.num_conv_layers())
        stop_pos = spec.conv_positions[static_cast<size_t>(frozen_prefix_depth)];
    else if (!spec.dense_positions.empty())
        stop_pos = spec.dense_positions.front();
    else
        stop_pos = static_cast<int>(spec.layers.size());

    const int n_layers = static_cast<int>(spec.layers.size());
    std::vector<Tensor> inputs(static_cast<size_t>(n_layers));
    Tensor cur = input;
    int conv_idx = 0, dense_idx = 0;
    for (int pos = 0; pos < n_layers; ++pos) {
        const LayerSpec& l = spec.layers[pos];
        inputs[static_cast<size_t>(pos)] = cur;
        switch (l.kind) {
            case LayerKind::Conv:
                cur = conv2d(cur, params.conv[static_cast<size_t>(conv_idx)], l.stride, l.pad);
                ++conv_idx;
                break;
            case LayerKind::MaxPool:
                cur = maxpool2d(cur, l.window, l.stride);
                break;
            case LayerKind::ReLU:
                cur = relu(cur);
                break;
            case LayerKind::Flatten: {
                const int flat_n = static_cast<int>(cur.numel());
                cur = Tensor({flat_n}, std::move(cur.data));
                break;
            }
            case LayerKind::Dense: {
                const DenseParams& d = params.dense[static_cast<size_t>(dense_idx)];
                cur = dense(cur, d.weights, d.bias);
                ++dense_idx;
                break;
            }
        }
    }

    auto [loss, d_cur] = softmax_xent(cur, label);
    for (int pos = n_layers - 1; pos >= stop_pos; --pos) {
        const LayerSpec& l = spec.layers[pos];
        const Tensor& x = inputs[static_cast<size_t>(pos)];
        const bool need_input_grad = pos > stop_pos;
        switch (l.kind) {
            case LayerKind::Conv: {
                --conv_idx;
                ConvGrads g = conv2d_backward(x, params.conv[static_cast<size_t>(conv_idx)],
                                              l.stride, l.pad, d_cur);
                grads.conv_w[static_cast<size_t>(conv_idx)] = std::move(g.weights);
                grads.conv_b[static_cast<size_t>(conv_idx)] = std::move(g.bias);
                if (need_input_grad) d_cur = std::move(g.input);
                break;
            }
            case LayerKind::MaxPool:
                if (need_input_grad) d_cur = maxpool2d_backward(x, l.window, l.stride, d_cur);
                break;
            case LayerKind::ReLU:
                if (need_input_grad) d_cur = relu_backward(x, d_cur);
                break;
            case LayerKind::Flatten:
                if (need_input_grad) d_cur = Tensor(x.shape, std::move(d_cur.data));
                break;
            case LayerKind::Dense: {
                --dense_idx;
                const DenseParams& d = params.dense[static_cast<size_t>(dense_idx)];
                DenseGrads g = dense_backward(x, d.weights, d_cur);
                grads.dense_w[static_cast<size_t>(dense_idx)] = std::move(g.weights);
                grads.dense_b[static_cast<size_t>(dense_idx)] = std::move(g.bias);
                if (need_input_grad) d_cur = std::move(g.input);
                break;
            }
        }
    }
    return loss;
}

NetSpec snet_spec(int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("snet: need at least 2 classes");
    std::vector<LayerSpec> layers = {
        LayerSpec::conv(8, 5, 5, 1, 2),  LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(16, 5, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(32, 3, 3, 1, 1), LayerSpec::relu(),
        LayerSpec::conv(32, 3, 3, 1, 1), LayerSpec::relu(),
        LayerSpec::conv(32, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(64),            LayerSpec::relu(),
        LayerSpec::dense(num_classes)};
    return NetSpec::build(std::move(layers), {1, 28, 28});
}

std::vector<LayerSpec> tail_after_conv(const NetSpec& spec, int k) {
    if (k < 1 || k > spec.num_conv_layers())
        throw std::invalid_argument("tail_after_conv: conv index out of range");
    const int pos = spec.conv_positions[static_cast<size_t>(k - 1)];
    return std::vector<LayerSpec>(spec.layers.begin() + pos + 1, spec.layers.end());
}

}  // namespace bft
