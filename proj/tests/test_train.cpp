#include <cmath>
#include <vector>

#include "bft/dataset.hpp"
#include "bft/net.hpp"
#include "bft/rng.hpp"
#include "bft/train.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using bft::Hyper;
using bft::LabeledSet;
using bft::NetParams;
using bft::NetSpec;
using bft::Tensor;

namespace {

// Two well-separated Gaussian-blob image classes: class 0 lights up the left
// half, class 1 the right half. A mean-difference threshold on
// (right - left) alone classifies this perfectly, which the oracle below
// verifies before any training claim is made.
LabeledSet blob_set(int per_class, uint64_t seed) {
    bft::Rng rng(bft::mix64(seed));
    LabeledSet set;
    set.num_classes = 2;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            Tensor img({1, 8, 8});
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const bool lit = (cls == 0) ? (x < 4) : (x >= 4);
                    const double base = lit ? 0.8 : 0.1;
                    img.at3(0, y, x) = static_cast<float>(
                        std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0));
                }
            set.images.push_back(std::move(img));
            set.labels.push_back(cls);
        }
    }
    return set;
}

// Separability oracle: threshold classifier on the half-difference statistic.
double split_statistic_accuracy(const LabeledSet& set) {
    int correct = 0;
    for (size_t i = 0; i < set.size(); ++i) {
        double left = 0.0, right = 0.0;
        const Tensor& img = set.images[i];
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) (x < 4 ? left : right) += img.at3(0, y, x);
        const int pred = right > left ? 1 : 0;
        if (pred == set.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

NetSpec tiny_spec() {
    return NetSpec::build(
        {
            bft::LayerSpec::conv(4, 3, 3, 1, 1),
            bft::LayerSpec::relu(),
            bft::LayerSpec::maxpool(2, 2),
            bft::LayerSpec::flatten(),
            bft::LayerSpec::dense(2),
        },
        {1, 8, 8});
}

bool conv_equal(const NetParams& a, const NetParams& b, size_t l) {
    return a.conv[l].weights == b.conv[l].weights && a.conv[l].bias == b.conv[l].bias;
}

}  // namespace

TEST_CASE("zero iterations leave parameters untouched with an empty history") {
    NetSpec s = tiny_spec();
    NetParams p = bft::init_net(s, 5);
    NetParams before = p;
    LabeledSet data = blob_set(4, 1);
    Hyper h;
    h.iterations = 0;
    h.batch = 4;
    bft::TrainHistory hist = bft::train(s, p, 0, data, data, h);
    CHECK(hist.losses.empty());
    CHECK(hist.evals.empty());
    CHECK(conv_equal(p, before, 0));
    CHECK(p.dense[0].weights == before.dense[0].weights);
}

TEST_CASE("train validates its inputs") {
    NetSpec s = tiny_spec();
    NetParams p = bft::init_net(s, 5);
    LabeledSet data = blob_set(4, 1);
    LabeledSet empty;

    Hyper h;
    h.iterations = 2;
    h.batch = 4;
    CHECK_THROWS(bft::train(s, p, 0, empty, data, h));  // empty dataset

    Hyper big = h;
    big.batch = static_cast<int>(data.size()) + 1;  // batch larger than dataset
    CHECK_THROWS(bft::train(s, p, 0, data, data, big));

    Hyper bad = h;
    bad.batch = 0;
    CHECK_THROWS(bft::train(s, p, 0, data, data, bad));

    CHECK_THROWS(bft::train(s, p, -1, data, data, h));
    CHECK_THROWS(bft::train(s, p, 2, data, data, h));  // deeper than L=1
}

TEST_CASE("training history has per-iteration losses and scheduled evals") {
    NetSpec s = tiny_spec();
    NetParams p = bft::init_net(s, 5);
    LabeledSet data = blob_set(8, 1);
    Hyper h;
    h.iterations = 10;
    h.eval_every = 4;
    h.batch = 4;
    bft::TrainHistory hist = bft::train(s, p, 0, data, data, h);
    REQUIRE(hist.losses.size() == 10);
    REQUIRE(hist.evals.size() == 3);  // iterations 4, 8, 10
    CHECK(hist.evals[0].iteration == 4);
    CHECK(hist.evals[1].iteration == 8);
    CHECK(hist.evals[2].iteration == 10);
    for (size_t i = 1; i < hist.evals.size(); ++i)
        CHECK(hist.evals[i].iteration > hist.evals[i - 1].iteration);
    for (float l : hist.losses) CHECK(std::isfinite(l));
}

TEST_CASE("training is deterministic for a fixed seed") {
    NetSpec s = tiny_spec();
    LabeledSet data = blob_set(8, 2);
    Hyper h;
    h.iterations = 12;
    h.batch = 4;
    h.seed = 77;

    NetParams p1 = bft::init_net(s, 9);
    NetParams p2 = bft::init_net(s, 9);
    bft::TrainHistory h1 = bft::train(s, p1, 0, data, data, h);
    bft::TrainHistory h2 = bft::train(s, p2, 0, data, data, h);
    CHECK(h1.losses == h2.losses);
    CHECK(conv_equal(p1, p2, 0));
    CHECK(p1.dense[0].weights == p2.dense[0].weights);

    Hyper other = h;
    other.seed = 78;
    NetParams p3 = bft::init_net(s, 9);
    bft::train(s, p3, 0, data, data, other);
    CHECK_FALSE(p1.dense[0].weights == p3.dense[0].weights);
}

TEST_CASE("freezing every conv layer keeps kernels bit identical") {
    NetSpec s = tiny_spec();
    NetParams p = bft::init_net(s, 5);
    NetParams before = p;
    LabeledSet data = blob_set(8, 3);
    Hyper h;
    h.iterations = 20;
    h.batch = 4;
    bft::train(s, p, s.num_conv_layers(), data, data, h);
    CHECK(conv_equal(p, before, 0));
    CHECK_FALSE(p.dense[0].weights == before.dense[0].weights);
}

TEST_CASE("partial freezing trains exactly the layers above the frozen depth") {
    NetSpec s = NetSpec::build(
        {
            bft::LayerSpec::conv(3, 3, 3, 1, 1),
            bft::LayerSpec::relu(),
            bft::LayerSpec::conv(3, 3, 3, 1, 1),
            bft::LayerSpec::relu(),
            bft::LayerSpec::maxpool(2, 2),
            bft::LayerSpec::flatten(),
            bft::LayerSpec::dense(2),
        },
        {1, 8, 8});
    NetParams p = bft::init_net(s, 6);
    NetParams before = p;
    LabeledSet data = blob_set(8, 4);
    Hyper h;
    h.iterations = 20;
    h.batch = 4;
    bft::train(s, p, 1, data, data, h);
    CHECK(conv_equal(p, before, 0));        // frozen
    CHECK_FALSE(conv_equal(p, before, 1));  // trainable
    CHECK_FALSE(p.dense[0].weights == before.dense[0].weights);
}

TEST_CASE("evaluate scores a hand-built constant classifier correctly") {
    NetSpec s = tiny_spec();
    NetParams p = bft::alloc_net_params(s);
    // all-zero net, but bias the dense layer toward class 1
    p.dense[0].bias.data[1] = 1.0f;
    LabeledSet data = blob_set(6, 5);  // balanced: 6 of each class
    CHECK(bft::evaluate(s, p, data) == doctest::Approx(0.5));
}

TEST_CASE("a separable blob task trains to high accuracy") {
    LabeledSet train = blob_set(40, 6);
    LabeledSet test = blob_set(20, 7);
    // independent separability oracle before the training claim
    REQUIRE(split_statistic_accuracy(train) == 1.0);
    REQUIRE(split_statistic_accuracy(test) == 1.0);

    NetSpec s = tiny_spec();
    NetParams p = bft::init_net(s, 12);
    Hyper h;
    h.iterations = 200;
    h.batch = 8;
    h.lr = 0.05f;
    h.seed = 3;
    bft::TrainHistory hist = bft::train(s, p, 0, train, test, h);
    REQUIRE(!hist.evals.empty());
    CHECK(hist.evals.back().accuracy >= 0.95);
}
