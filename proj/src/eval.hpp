#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "dataset.hpp"

namespace oneshot {

/// Immutable table of stored embeddings, one per dataset image.
struct EmbeddingEntry {
    std::string id;
    Category category;
    std::vector<float> vec;
};

struct EmbeddingIndex {
    int dim = 0;
    std::vector<EmbeddingEntry> entries;
    size_t size() const { return entries.size(); }
};

/// Embeds every image in dataset order. TrainMode::siamese stores the
/// sigmoid embedding, TrainMode::triplet the unit-normalized head output.
EmbeddingIndex build_index(const Backbone& net, const Dataset& dataset, TrainMode head);

struct EvalReport {
    std::string protocol;   // "oneshot" | "knn"
    std::string embedding;  // "siamese" | "triplet"
    int k = 0;              // knn only, 0 = absent
    int dim = 0;
    std::array<double, kCategoryCount> per_category{};  // percentages
    std::array<bool, kCategoryCount> present{};
    double average = 0.0;
    int episodes_or_queries = 0;
    uint64_t seed = 0;
    int ways = kCategoryCount;
    bool degraded = false;

    std::string to_json() const;
    std::string to_table() const;
};

/// Episode decision rule: among support entries (one per category), pick the
/// category of the entry nearest to the query in squared Euclidean distance.
/// Exact ties break toward the lowest resin numeral.
Category nearest_support(const EmbeddingIndex& index, int query, const std::vector<int>& support);

/// Nearest-support classification of one query given a support set covering
/// each present category exactly once. Ties break toward the lowest resin
/// numeral.
Category one_shot_episode(const Backbone& net, TrainMode mode, const LabeledImage& sample,
                          const std::vector<const LabeledImage*>& support);

/// Episodic protocol: per episode a uniform query and a uniform support image
/// per category (excluding the query when possible). Categories with no
/// images degrade the run to fewer ways and flag the report.
EvalReport eval_one_shot(const Backbone& net, TrainMode mode, const Dataset& dataset, int episodes, uint64_t seed);

/// Leave-one-out k-nearest-neighbour vote over squared Euclidean distances.
/// Distance ties break by entry order; vote ties by smallest mean distance
/// among the tied categories, then lowest resin numeral.
Category knn_classify(const EmbeddingIndex& index, int query, int k);

/// Classifies every entry leave-one-out. Per-category accuracy plus the
/// unweighted mean over present categories.
EvalReport eval_knn(const EmbeddingIndex& index, int k);

}  // namespace oneshot
