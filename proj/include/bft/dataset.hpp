#pragma once

#include <string>
#include <vector>

#include "bft/tensor.hpp"

namespace bft {

struct LabeledSet {
    std::vector<Tensor> images;  // each [C,H,W], values in [0,1]
    std::vector<int> labels;
    int num_classes = 0;

    size_t size() const { return images.size(); }
};

// IDX files: big-endian magic 0x00000803 (images) / 0x00000801 (labels).
// Pixels are normalized to [0,1] (255 -> 1.0 exactly).
LabeledSet load_idx_dataset(const std::string& images_path, const std::string& labels_path);
void save_idx_dataset(const LabeledSet& set, const std::string& images_path,
                      const std::string& labels_path);

struct TaskSpec {
    std::string name;
    std::vector<int> classes;  // original labels, in task-label order
    int train_per_class = 0;
    int test_per_class = 0;
};

struct Task {
    TaskSpec spec;
    LabeledSet train;
    LabeledSet test;
};

// Splits a labeled train/test pair into one task per class subset, with
// labels remapped to 0..K-1. Subsets must be pairwise disjoint.
std::vector<Task> make_disjoint_tasks(const LabeledSet& train_all, const LabeledSet& test_all,
                                      const std::vector<std::vector<int>>& subsets,
                                      int train_per_class, int test_per_class);

// Procedural 10-class 28x28 grayscale set: oriented bars, diagonals, cross,
// X, square, ring, disk and dot-grid patterns with jitter and pixel noise.
// All classes share the same stroke vocabulary, so low-level features
// transfer between them. Pixel values are byte-quantized, so an IDX
// round trip is exact.
LabeledSet make_stroke_dataset(int per_class, uint64_t seed);

}  // namespace bft
