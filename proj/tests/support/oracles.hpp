#pragma once

// Test-side reference implementations. Everything here recomputes network
// semantics from first principles in double precision, with its own loops —
// no calls into the library's forward/backward/op code — so library results
// can be checked against an independent oracle. Also provides a random
// network generator and a central-finite-difference gradient checker with
// kink detection.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bft/net.hpp"
#include "bft/rng.hpp"
#include "bft/tensor.hpp"

namespace oracle {

struct DTensor {
    std::vector<int> shape;
    std::vector<double> data;

    DTensor() = default;
    explicit DTensor(std::vector<int> s) : shape(std::move(s)) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        data.assign(n, 0.0);
    }
    double& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
};

inline DTensor to_double(const bft::Tensor& t) {
    DTensor d;
    d.shape = t.shape;
    d.data.assign(t.data.begin(), t.data.end());
    return d;
}

inline DTensor ref_conv(const DTensor& in, const bft::ConvKernels& k, int stride, int pad) {
    const int h = in.shape[1], w = in.shape[2];
    const int oh = (h + 2 * pad - k.kh) / stride + 1;
    const int ow = (w + 2 * pad - k.kw) / stride + 1;
    const int ipg = k.in_channels_per_group;
    const int opg = k.out_channels / k.groups;
    DTensor out({k.out_channels, oh, ow});
    for (int o = 0; o < k.out_channels; ++o) {
        const int ci0 = (o / opg) * ipg;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = k.bias.data[static_cast<size_t>(o)];
                for (int ci = 0; ci < ipg; ++ci)
                    for (int ky = 0; ky < k.kh; ++ky)
                        for (int kx = 0; kx < k.kw; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            const size_t wi =
                                ((static_cast<size_t>(o) * ipg + ci) * k.kh + ky) * k.kw + kx;
                            acc += in.at3(ci0 + ci, iy, ix) *
                                   static_cast<double>(k.weights.data[wi]);
                        }
                out.at3(o, oy, ox) = acc;
            }
        }
    }
    return out;
}

inline DTensor ref_maxpool(const DTensor& in, int window, int stride) {
    const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    DTensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double best = -1e300;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        best = std::max(best, in.at3(ch, oy * stride + ky, ox * stride + kx));
                out.at3(ch, oy, ox) = best;
            }
    return out;
}

inline DTensor ref_relu(const DTensor& in) {
    DTensor out = in;
    for (double& v : out.data) v = std::max(0.0, v);
    return out;
}

inline DTensor ref_dense(const DTensor& in, const bft::DenseParams& p) {
    const int out_n = p.weights.shape[0], in_n = p.weights.shape[1];
    DTensor out({out_n});
    for (int o = 0; o < out_n; ++o) {
        double acc = p.bias.data[static_cast<size_t>(o)];
        for (int i = 0; i < in_n; ++i)
            acc += static_cast<double>(p.weights.data[static_cast<size_t>(o) * in_n + i]) *
                   in.data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(o)] = acc;
    }
    return out;
}

struct RefTrace {
    std::vector<DTensor> outputs;  // one per layer position
};

inline RefTrace ref_forward(const bft::NetSpec& spec, const bft::NetParams& params,
                            const bft::Tensor& input) {
    RefTrace trace;
    DTensor cur = to_double(input);
    int conv_i = 0, dense_i = 0;
    for (const bft::LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case bft::LayerKind::Conv:
                cur = ref_conv(cur, params.conv[static_cast<size_t>(conv_i++)], l.stride, l.pad);
                break;
            case bft::LayerKind::MaxPool: cur = ref_maxpool(cur, l.window, l.stride); break;
            case bft::LayerKind::ReLU: cur = ref_relu(cur); break;
            case bft::LayerKind::Flatten: {
                DTensor flat({static_cast<int>(cur.data.size())});
                flat.data = cur.data;
                cur = std::move(flat);
                break;
            }
            case bft::LayerKind::Dense:
                cur = ref_dense(cur, params.dense[static_cast<size_t>(dense_i++)]);
                break;
        }
        trace.outputs.push_back(cur);
    }
    return trace;
}

inline double ref_softmax_xent(const DTensor& logits, int label) {
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits.data) denom += std::exp(v - mx);
    return -(logits.data[static_cast<size_t>(label)] - mx - std::log(denom));
}

inline double ref_loss(const bft::NetSpec& spec, const bft::NetParams& params,
                       const bft::Tensor& input, int label) {
    const RefTrace trace = ref_forward(spec, params, input);
    return ref_softmax_xent(trace.outputs.back(), label);
}

// --- random network generation -------------------------------------------

struct GenOptions {
    int min_conv = 1;
    int max_conv = 4;
    bool with_head = true;    // flatten + dense classifier on top
    bool allow_groups = true; // mix groups=2 layers in
};

inline bft::NetSpec random_spec(bft::Rng& rng, const GenOptions& opt = {}) {
    const int C = 1 + static_cast<int>(rng.uniform_below(2));
    const int H = 10 + static_cast<int>(rng.uniform_below(5));
    const int W = 10 + static_cast<int>(rng.uniform_below(5));
    const int L =
        opt.min_conv + static_cast<int>(rng.uniform_below(
                           static_cast<uint64_t>(opt.max_conv - opt.min_conv + 1)));
    std::vector<bft::LayerSpec> layers;
    int h = H, w = W, c = C;
    for (int l = 0; l < L; ++l) {
        int groups = 1;
        if (opt.allow_groups && c % 2 == 0 && rng.uniform_below(2) == 0) groups = 2;
        const int out = groups * (1 + static_cast<int>(rng.uniform_below(4)));
        int k = 1 + 2 * static_cast<int>(rng.uniform_below(2));  // 1 or 3
        const int pad = static_cast<int>(rng.uniform_below(2));
        if (k > h + 2 * pad || k > w + 2 * pad) k = 1;
        const int stride = (h >= 8 && w >= 8 && rng.uniform_below(3) == 0) ? 2 : 1;
        layers.push_back(bft::LayerSpec::conv(out, k, k, stride, pad, groups));
        h = (h + 2 * pad - k) / stride + 1;
        w = (w + 2 * pad - k) / stride + 1;
        c = out;
        if (rng.uniform_below(2) == 0) layers.push_back(bft::LayerSpec::relu());
        if (h >= 4 && w >= 4 && rng.uniform_below(3) == 0) {
            layers.push_back(bft::LayerSpec::maxpool(2, 2));
            h = (h - 2) / 2 + 1;
            w = (w - 2) / 2 + 1;
        }
    }
    if (opt.with_head) {
        layers.push_back(bft::LayerSpec::relu());
        layers.push_back(bft::LayerSpec::flatten());
        layers.push_back(bft::LayerSpec::dense(3 + static_cast<int>(rng.uniform_below(3))));
    }
    return bft::NetSpec::build(std::move(layers), {C, H, W});
}

inline bft::Tensor random_input(const std::vector<int>& shape, bft::Rng& rng) {
    bft::Tensor t(shape);
    for (float& v : t.data) v = static_cast<float>(0.5 * rng.normal());
    return t;
}

// --- finite-difference gradient audit -------------------------------------

struct GradAudit {
    double max_rel_err = 0.0;
    long checked = 0;
    long skipped = 0;  // kink-adjacent coordinates
};

// Central differences of the double-precision reference loss, compared
// against the library's analytic gradients. Coordinates whose loss is locally
// non-smooth (ReLU/maxpool switch inside the probe interval) are detected by
// an epsilon-halving consistency check and skipped.
inline GradAudit audit_gradients(const bft::NetSpec& spec, bft::NetParams params,
                                 const bft::Tensor& input, int label, int frozen_depth,
                                 bft::Rng& rng, int coords_per_tensor = 24) {
    bft::NetGrads grads;
    bft::loss_and_grads(spec, params, input, label, frozen_depth, grads);

    std::vector<std::pair<bft::Tensor*, const bft::Tensor*>> pairs;
    for (size_t l = 0; l < params.conv.size(); ++l) {
        if (static_cast<int>(l) < frozen_depth) continue;
        pairs.push_back({&params.conv[l].weights, &grads.conv_w[l]});
        pairs.push_back({&params.conv[l].bias, &grads.conv_b[l]});
    }
    for (size_t d = 0; d < params.dense.size(); ++d) {
        pairs.push_back({&params.dense[d].weights, &grads.dense_w[d]});
        pairs.push_back({&params.dense[d].bias, &grads.dense_b[d]});
    }

    const double eps = 1e-3;
    const double f0 = ref_loss(spec, params, input, label);
    GradAudit audit;
    for (auto& [param, grad] : pairs) {
        const int n = static_cast<int>(param->data.size());
        std::vector<int> coords;
        if (n <= coords_per_tensor) {
            coords.resize(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            coords = bft::sample_without_replacement(n, coords_per_tensor, rng);
        }
        for (int ci : coords) {
            float& slot = param->data[static_cast<size_t>(ci)];
            const float saved = slot;
            const auto probe = [&](double delta) {
                slot = static_cast<float>(static_cast<double>(saved) + delta);
                const double loss = ref_loss(spec, params, input, label);
                slot = saved;
                return loss;
            };
            const double fp = probe(eps), fm = probe(-eps);
            const double fp2 = probe(eps / 2), fm2 = probe(-eps / 2);
            const double n1 = (fp - fm) / (2 * eps);
            const double n2 = (fp2 - fm2) / eps;
            // halving eps changes a smooth estimate by O(eps^2); a kink inside
            // the probe interval shifts it by O(kink slope), so disagreement
            // marks the coordinate as unusable
            if (std::abs(n1 - n2) > 1e-4 * std::max(1.0, std::abs(n1))) {
                ++audit.skipped;
                continue;
            }
            // a kink sitting exactly at the evaluation point (e.g. a ReLU fed
            // a value that is exactly zero) leaves both central estimates in
            // agreement while the two one-sided slopes differ; the analytic
            // value is a one-sided subgradient there, so the comparison is
            // meaningless and the coordinate is skipped as well
            const double np = (fp - f0) / eps;
            const double nm = (f0 - fm) / eps;
            if (std::abs(np - nm) > 1e-2 * std::max({1.0, std::abs(np), std::abs(nm)})) {
                ++audit.skipped;
                continue;
            }
            const double a = static_cast<double>(grad->data[static_cast<size_t>(ci)]);
            const double rel = std::abs(a - n2) / std::max({std::abs(a), std::abs(n2), 0.01});
            audit.max_rel_err = std::max(audit.max_rel_err, rel);
            ++audit.checked;
        }
    }
    return audit;
}

}  // namespace oracle
