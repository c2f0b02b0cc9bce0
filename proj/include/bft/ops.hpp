#pragma once

#include <utility>

#include "bft/tensor.hpp"

namespace bft {

// One convolutional layer's learnable state. `weights` is
// [out_channels, in_channels_per_group, kh, kw]; output channel j belongs to
// group j / (out_channels / groups) and reads only that group's input slice.
struct ConvKernels {
    int out_channels = 0;
    int in_channels_per_group = 0;
    int kh = 0, kw = 0;
    int groups = 1;
    Tensor weights;
    Tensor bias;

    void validate() const;
};

struct ConvGrads {
    Tensor input;    // same shape as op input
    Tensor weights;  // same shape as kernels.weights
    Tensor bias;     // [out_channels]
};

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

// input [C,H,W] -> [C_out,H',W'], H' = (H + 2*pad - kh)/stride + 1 (floor).
// Each output element accumulates its dot product in double, then rounds.
Tensor conv2d(const Tensor& input, const ConvKernels& k, int stride, int pad);
ConvGrads conv2d_backward(const Tensor& input, const ConvKernels& k, int stride, int pad,
                          const Tensor& d_out);

Tensor maxpool2d(const Tensor& input, int window, int stride);
// Routes each output's gradient to the first maximal element in scan order.
Tensor maxpool2d_backward(const Tensor& input, int window, int stride, const Tensor& d_out);

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& d_out);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& d_out);

// loss = -log softmax(logits)[label], softmax with max subtraction.
// d_logits = softmax(logits) - onehot(label).
std::pair<float, Tensor> softmax_xent(const Tensor& logits, int label);

// velocity <- momentum*velocity + grads; params <- params - lr*velocity
void sgd_update(Tensor& params, const Tensor& grads, float lr, float momentum, Tensor& velocity);

}  // namespace bft
