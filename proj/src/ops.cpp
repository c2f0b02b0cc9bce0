#include "bft/ops.hpp"

#include <algorithm>
#include <limits>

namespace bft {

void ConvKernels::validate() const {
    if (out_channels <= 0 || in_channels_per_group <= 0 || kh <= 0 || kw <= 0 || groups <= 0)
        throw std::invalid_argument("conv kernels: non-positive dimension");
    if (out_channels % groups != 0)
        throw std::invalid_argument("conv kernels: out_channels not divisible by groups");
    std::vector<int> ws = {out_channels, in_channels_per_group, kh, kw};
    if (weights.shape != ws)
        throw std::invalid_argument("conv kernels: weights shape " + shape_str(weights.shape) +
                                    " does not match declared " + shape_str(ws));
    if (bias.shape != std::vector<int>{out_channels})
        throw std::invalid_argument("conv kernels: bias shape mismatch");
}

static void check_conv_geometry(const Tensor& input, const ConvKernels& k, int stride, int pad) {
    k.validate();
    if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (stride <= 0) throw std::invalid_argument("conv2d: non-positive stride");
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    const int c_in = input.dim(0);
    if (c_in != k.groups * k.in_channels_per_group)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(c_in) +
                                    " != groups*in_channels_per_group");
    if (input.dim(1) + 2 * pad < k.kh || input.dim(2) + 2 * pad < k.kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
}

Tensor conv2d(const Tensor& input, const ConvKernels& k, int stride, int pad) {
    check_conv_geometry(input, k, stride, pad);
    const int h = input.dim(1), w = input.dim(2);
    const int oh = (h + 2 * pad - k.kh) / stride + 1;
    const int ow = (w + 2 * pad - k.kw) / stride + 1;
    const int ipg = k.in_channels_per_group;
    const int opg = k.out_channels / k.groups;

    Tensor out({k.out_channels, oh, ow});
    const float* wptr = k.weights.data.data();
    for (int o = 0; o < k.out_channels; ++o) {
        const int g = o / opg;
        const int ci0 = g * ipg;
        const float b = k.bias.data[static_cast<size_t>(o)];
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                double acc = static_cast<double>(b);
                for (int ci = 0; ci < ipg; ++ci) {
                    const float* wrow =
                        wptr + ((static_cast<size_t>(o) * ipg + ci) * k.kh) * k.kw;
                    for (int ky = 0; ky < k.kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k.kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += static_cast<double>(input.at3(ci0 + ci, iy, ix)) *
                                   static_cast<double>(wrow[ky * k.kw + kx]);
                        }
                    }
                }
                out.at3(o, oy, ox) = static_cast<float>(acc);
            }
        }
    }
    ensure_finite(out, "conv2d");
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvKernels& k, int stride, int pad,
                          const Tensor& d_out) {
    check_conv_geometry(input, k, stride, pad);
    const int h = input.dim(1), w = input.dim(2);
    const int oh = (h + 2 * pad - k.kh) / stride + 1;
    const int ow = (w + 2 * pad - k.kw) / stride + 1;
    require_shape(d_out, {k.out_channels, oh, ow}, "conv2d_backward: d_out");
    const int ipg = k.in_channels_per_group;
    const int opg = k.out_channels / k.groups;

    ConvGrads g;
    g.input = Tensor(input.shape);
    g.bias = Tensor({k.out_channels});
    // weight/bias grads: accumulate in double per coefficient, then round once
    std::vector<double> dw(k.weights.data.size(), 0.0);
    std::vector<double> din(input.data.size(), 0.0);
    for (int o = 0; o < k.out_channels; ++o) {
        const int grp = o / opg;
        const int ci0 = grp * ipg;
        double db = 0.0;
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                const double dv = static_cast<double>(d_out.at3(o, oy, ox));
                db += dv;
                for (int ci = 0; ci < ipg; ++ci) {
                    const size_t wbase = (static_cast<size_t>(o) * ipg + ci) * k.kh * k.kw;
                    for (int ky = 0; ky < k.kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k.kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            const size_t ii =
                                (static_cast<size_t>(ci0 + ci) * h + iy) * w + ix;
                            dw[wbase + ky * k.kw + kx] +=
                                dv * static_cast<double>(input.data[ii]);
                            din[ii] += dv * static_cast<double>(
                                                k.weights.data[wbase + ky * k.kw + kx]);
                        }
                    }
                }
            }
        }
        g.bias.data[static_cast<size_t>(o)] = static_cast<float>(db);
    }
    g.weights = Tensor(k.weights.shape);
    for (size_t i = 0; i < dw.size(); ++i) g.weights.data[i] = static_cast<float>(dw[i]);
    for (size_t i = 0; i < din.size(); ++i) g.input.data[i] = static_cast<float>(din[i]);
    ensure_finite(g.weights, "conv2d_backward");
    ensure_finite(g.input, "conv2d_backward");
    ensure_finite(g.bias, "conv2d_backward");
    return g;
}

static void check_pool_geometry(const Tensor& input, int window, int stride) {
    if (input.rank() != 3) throw std::invalid_argument("maxpool2d: input must be [C,H,W]");
    if (window <= 0 || stride <= 0)
        throw std::invalid_argument("maxpool2d: non-positive window or stride");
    if (window > input.dim(1) || window > input.dim(2))
        throw std::invalid_argument("maxpool2d: window larger than spatial extent");
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
    check_pool_geometry(input, window, stride);
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                float m = -std::numeric_limits<float>::infinity();
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        m = std::max(m, input.at3(ch, oy * stride + ky, ox * stride + kx));
                out.at3(ch, oy, ox) = m;
            }
    ensure_finite(out, "maxpool2d");
    return out;
}

Tensor maxpool2d_backward(const Tensor& input, int window, int stride, const Tensor& d_out) {
    check_pool_geometry(input, window, stride);
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    require_shape(d_out, {c, oh, ow}, "maxpool2d_backward: d_out");
    Tensor g(input.shape);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int by = oy * stride, bx = ox * stride;
                float m = input.at3(ch, by, bx);
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx) {
                        float v = input.at3(ch, oy * stride + ky, ox * stride + kx);
                        if (v > m) {
                            m = v;
                            by = oy * stride + ky;
                            bx = ox * stride + kx;
                        }
                    }
                g.at3(ch, by, bx) += d_out.at3(ch, oy, ox);
            }
    ensure_finite(g, "maxpool2d_backward");
    return g;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (weights.rank() != 2) throw std::invalid_argument("dense: weights must be [O,D]");
    const int out_n = weights.dim(0), in_n = weights.dim(1);
    if (input.numel() != in_n)
        throw std::invalid_argument("dense: input length " + std::to_string(input.numel()) +
                                    " != weight columns " + std::to_string(in_n));
    require_shape(bias, {out_n}, "dense: bias");
    Tensor out({out_n});
    for (int o = 0; o < out_n; ++o) {
        double acc = static_cast<double>(bias.data[static_cast<size_t>(o)]);
        const float* wrow = weights.data.data() + static_cast<size_t>(o) * in_n;
        for (int d = 0; d < in_n; ++d)
            acc += static_cast<double>(wrow[d]) * static_cast<double>(input.data[static_cast<size_t>(d)]);
        out.data[static_cast<size_t>(o)] = static_cast<float>(acc);
    }
    ensure_finite(out, "dense");
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& d_out) {
    if (weights.rank() != 2) throw std::invalid_argument("dense_backward: weights must be [O,D]");
    const int out_n = weights.dim(0), in_n = weights.dim(1);
    if (input.numel() != in_n) throw std::invalid_argument("dense_backward: input size mismatch");
    require_shape(d_out, {out_n}, "dense_backward: d_out");
    DenseGrads g;
    g.weights = Tensor(weights.shape);
    g.bias = d_out;
    g.input = Tensor(input.shape);
    for (int o = 0; o < out_n; ++o) {
        const double dv = static_cast<double>(d_out.data[static_cast<size_t>(o)]);
        for (int d = 0; d < in_n; ++d)
            g.weights.data[static_cast<size_t>(o) * in_n + d] =
                static_cast<float>(dv * static_cast<double>(input.data[static_cast<size_t>(d)]));
    }
    for (int d = 0; d < in_n; ++d) {
        double acc = 0.0;
        for (int o = 0; o < out_n; ++o)
            acc += static_cast<double>(weights.data[static_cast<size_t>(o) * in_n + d]) *
                   static_cast<double>(d_out.data[static_cast<size_t>(o)]);
        g.input.data[static_cast<size_t>(d)] = static_cast<float>(acc);
    }
    ensure_finite(g.weights, "dense_backward");
    ensure_finite(g.input, "dense_backward");
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
    ensure_finite(out, "relu");
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& d_out) {
    if (!input.same_shape(d_out))
        throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor g = d_out;
    for (size_t i = 0; i < g.data.size(); ++i)
        if (input.data[i] <= 0.0f) g.data[i] = 0.0f;
    return g;
}

std::pair<float, Tensor> softmax_xent(const Tensor& logits, int label) {
    const int k = static_cast<int>(logits.numel());
    if (label < 0 || label >= k) throw std::invalid_argument("softmax_xent: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : logits.data) mx = std::max(mx, static_cast<double>(v));
    double denom = 0.0;
    for (float v : logits.data) denom += std::exp(static_cast<double>(v) - mx);
    Tensor d(logits.shape);
    for (int i = 0; i < k; ++i) {
        double p = std::exp(static_cast<double>(logits.data[static_cast<size_t>(i)]) - mx) / denom;
        d.data[static_cast<size_t>(i)] = static_cast<float>(p - (i == label ? 1.0 : 0.0));
    }
    double loss = -(static_cast<double>(logits.data[static_cast<size_t>(label)]) - mx - std::log(denom));
    ensure_finite(d, "softmax_xent");
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss in softmax_xent");
    return {static_cast<float>(loss), d};
}

void sgd_update(Tensor& params, const Tensor& grads, float lr, float momentum, Tensor& velocity) {
    if (!params.same_shape(grads) || !params.same_shape(velocity))
        throw std::invalid_argument("sgd_update: shape mismatch");
    for (size_t i = 0; i < params.data.size(); ++i) {
        velocity.data[i] = momentum * velocity.data[i] + grads.data[i];
        params.data[i] -= lr * velocity.data[i];
    }
    ensure_finite(params, "sgd_update");
}

}  // namespace bft
