#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bft/filtertree.hpp"
#include "bft/net.hpp"

namespace bft {

struct SourceNet {
    NetSpec spec;
    NetParams params;
    std::string source_id;
    std::string task_label;
};

struct SourceInfo {
    std::string source_id;
    std::string spec_digest;
    std::string task_label;

    bool operator==(const SourceInfo&) const = default;
};

// All layer-k filter-trees of every source, pooled. Entries are ordered
// source-major, filter index ascending within a source, so entry count is the
// sum of the sources' layer-k filter counts and each (source, index) pair
// appears exactly once.
struct FilterBank {
    int apex_layer = 0;
    std::vector<int> input_shape;  // [C,H,W], shared by all sources
    std::vector<SourceInfo> sources;
    std::vector<FilterTree> entries;
};

// Ordered draw of distinct bank entries plus the seed that produced it.
struct Selection {
    std::vector<int> entry_indices;
    uint64_t seed = 0;
};

FilterBank build_bank(const std::vector<SourceNet>& sources, int k);

// Uniform without-replacement draw of n entries: the first n positions of a
// seeded Fisher-Yates shuffle of the entry indices.
Selection sample(const FilterBank& bank, int n, uint64_t seed);

void save_bank(const FilterBank& bank, const std::string& path);
FilterBank load_bank(const std::string& path);

}  // namespace bft
