#pragma once

#include <cstdint>
#include <vector>

#include "bft/dataset.hpp"
#include "bft/net.hpp"

namespace bft {

struct Hyper {
    float lr = 0.01f;
    float momentum = 0.9f;
    int batch = 16;
    long iterations = 500;
    long eval_every = 50;
    uint64_t seed = 0;
};

struct EvalPoint {
    long iteration;
    double accuracy;
};

struct TrainHistory {
    std::vector<float> losses;      // one per iteration
    std::vector<EvalPoint> evals;   // strictly increasing iterations
};

// SGD with momentum over shuffled mini-batches. Conv layers
// 1..frozen_prefix_depth keep their parameters bit-identical; everything
// above trains. Evaluates on eval_set every eval_every iterations and at the
// final iteration.
TrainHistory train(const NetSpec& spec, NetParams& params, int frozen_prefix_depth,
                   const LabeledSet& train_set, const LabeledSet& eval_set, const Hyper& hyper);

double evaluate(const NetSpec& spec, const NetParams& params, const LabeledSet& set);

}  // namespace bft
