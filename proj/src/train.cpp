#include "bft/train.hpp"

#include <algorithm>

#include "bft/parallel.hpp"
#include "bft/rng.hpp"

namespace bft {

namespace {

enum class SlotKind { ConvW, ConvB, DenseW, DenseB };

struct Slot {
    SlotKind kind;
    size_t index;
};

Tensor* slot_param(NetParams& p, const Slot& s) {
    switch (s.kind) {
        case SlotKind::ConvW: return &p.conv[s.index].weights;
        case SlotKind::ConvB: return &p.conv[s.index].bias;
        case SlotKind::DenseW: return &p.dense[s.index].weights;
        case SlotKind::DenseB: return &p.dense[s.index].bias;
    }
    return nullptr;
}

const Tensor* slot_grad(const NetGrads& g, const Slot& s) {
    switch (s.kind) {
        case SlotKind::ConvW: return &g.conv_w[s.index];
        case SlotKind::ConvB: return &g.conv_b[s.index];
        case SlotKind::DenseW: return &g.dense_w[s.index];
        case SlotKind::DenseB: return &g.dense_b[s.index];
    }
    return nullptr;
}

std::vector<Slot> trainable_slots(const NetParams& params, int frozen_prefix_depth) {
    std::vector<Slot> slots;
    for (size_t l = 0; l < params.conv.size(); ++l) {
        if (static_cast<int>(l) + 1 <= frozen_prefix_depth) continue;
        slots.push_back({SlotKind::ConvW, l});
        slots.push_back({SlotKind::ConvB, l});
    }
    for (size_t d = 0; d < params.dense.size(); ++d) {
        slots.push_back({SlotKind::DenseW, d});
        slots.push_back({SlotKind::DenseB, d});
    }
    return slots;
}

}  // namespace

double evaluate(const NetSpec& spec, const NetParams& params, const LabeledSet& set) {
    if (set.images.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const int n = static_cast<int>(set.images.size());
    std::vector<unsigned char> correct(static_cast<size_t>(n), 0);
    parallel_for(n, [&](int i) {
        const Tensor& logits = forward(spec, params, set.images[static_cast<size_t>(i)]).logits;
        int best = 0;
        for (int k = 1; k < logits.numel(); ++k)
            if (logits.data[static_cast<size_t>(k)] > logits.data[static_cast<size_t>(best)])
                best = k;
        correct[static_cast<size_t>(i)] = best == set.labels[static_cast<size_t>(i)] ? 1 : 0;
    });
    long hits = 0;
    for (unsigned char c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(n);
}

TrainHistory train(const NetSpec& spec, NetParams& params, int frozen_prefix_depth,
                   const LabeledSet& train_set, const LabeledSet& eval_set, const Hyper& hyper) {
    if (train_set.images.empty()) throw std::invalid_argument("train: empty dataset");
    if (hyper.batch <= 0) throw std::invalid_argument("train: non-positive batch size");
    if (hyper.batch > static_cast<int>(train_set.images.size()))
        throw std::invalid_argument("train: batch larger than dataset");
    if (hyper.iterations < 0) throw std::invalid_argument("train: negative iteration count");
    if (hyper.eval_every <= 0) throw std::invalid_argument("train: non-positive eval_every");
    if (frozen_prefix_depth < 0 || frozen_prefix_depth > spec.num_conv_layers())
        throw std::invalid_argument("train: frozen depth out of range");

    TrainHistory history;
    if (hyper.iterations == 0) return history;

    const std::vector<Slot> slots = trainable_slots(params, frozen_prefix_depth);
    std::vector<Tensor> velocity;
    std::vector<std::vector<double>> accum;
    velocity.reserve(slots.size());
    accum.reserve(slots.size());
    for (const Slot& s : slots) {
        velocity.emplace_back(slot_param(params, s)->shape);
        accum.emplace_back(slot_param(params, s)->data.size(), 0.0);
    }

    Rng batch_rng(sub_seed(hyper.seed, 2));
    const int n = static_cast<int>(train_set.images.size());
    std::vector<int> order;
    int cursor = n;  // force initial shuffle

    std::vector<NetGrads> batch_grads(static_cast<size_t>(hyper.batch));
    std::vector<float> batch_loss(static_cast<size_t>(hyper.batch));
    std::vector<int> batch_idx(static_cast<size_t>(hyper.batch));

    for (long iter = 1; iter <= hyper.iterations; ++iter) {
        if (cursor + hyper.batch > n) {
            order = random_permutation(n, batch_rng);
            cursor = 0;
        }
        for (int b = 0; b < hyper.batch; ++b)
            batch_idx[static_cast<size_t>(b)] = order[static_cast<size_t>(cursor + b)];
        cursor += hyper.batch;

        parallel_for(hyper.batch, [&](int b) {
            const int ex = batch_idx[static_cast<size_t>(b)];
            batch_loss[static_cast<size_t>(b)] =
                loss_and_grads(spec, params, train_set.images[static_cast<size_t>(ex)],
                               train_set.labels[static_cast<size_t>(ex)], frozen_prefix_depth,
                               batch_grads[static_cast<size_t>(b)]);
        });

        // fixed-order reduction keeps results identical across worker counts
        double loss_sum = 0.0;
        for (int b = 0; b < hyper.batch; ++b) loss_sum += batch_loss[static_cast<size_t>(b)];
        for (size_t si = 0; si < slots.size(); ++si) {
            std::vector<double>& acc = accum[si];
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int b = 0; b < hyper.batch; ++b) {
                const Tensor* g = slot_grad(batch_grads[static_cast<size_t>(b)], slots[si]);
                for (size_t i = 0; i < acc.size(); ++i)
                    acc[i] += static_cast<double>(g->data[i]);
            }
        }
        const double inv_batch = 1.0 / static_cast<double>(hyper.batch);
        for (size_t si = 0; si < slots.size(); ++si) {
            Tensor grad(slot_param(params, slots[si])->shape);
            for (size_t i = 0; i < grad.data.size(); ++i)
                grad.data[i] = static_cast<float>(accum[si][i] * inv_batch);
            sgd_update(*slot_param(params, slots[si]), grad, hyper.lr, hyper.momentum,
                       velocity[si]);
        }

        history.losses.push_back(static_cast<float>(loss_sum * inv_batch));
        if (iter % hyper.eval_every == 0 || iter == hyper.iterations)
            history.evals.push_back({iter, evaluate(spec, params, eval_set)});
    }
    return history;
}

}  // namespace bft
