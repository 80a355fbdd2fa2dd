#pragma once

#include <cstdint>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace oneshot {

enum class TrainMode { siamese, triplet };

struct ConvSpec {
    int out_channels;
    int kernel_size;
};

/// Topology of the shared embedding network: a conv/relu/pool trunk, a
/// sigmoid-bounded embedding layer, and an optional lower-dimensional head
/// used by the triplet path. Every conv except the last is followed by 2x2
/// max pooling.
struct BackboneConfig {
    int input_size = 105;
    int input_channels = 1;
    std::vector<ConvSpec> convs = {{64, 10}, {128, 7}, {128, 4}, {256, 4}};
    int embedding_dim = 4096;
    int triplet_head_dim = 128;
    bool include_triplet_head = false;
};

struct StagePlan {
    std::vector<int> spatial;  // spatial size after each conv / pool stage
    int flatten_size = 0;
};

/// Propagates the input size through the stack; throws naming the first
/// stage whose spatial size underflows.
StagePlan plan_stages(const BackboneConfig& config);

struct Backbone {
    BackboneConfig config;
    ParamSet params;
};

/// Deterministic initialization: weights N(0, sqrt(2/fan_in)), conv biases
/// 0.5, fully-connected biases 0. The siamese score head (scale, shift)
/// starts at (1, 0).
Backbone build_backbone(const BackboneConfig& config, uint64_t seed);

/// Trunk forward on a tape. images: [C,S,S] or [B,C,S,S].
/// Returns the sigmoid embedding, [E] or [B,E].
Tape::Val embed_on_tape(Tape& tape, Backbone& net, Tape::Val images);

/// Triplet head on top of the trunk output (no normalization; the caller
/// normalizes per row).
Tape::Val triplet_head_on_tape(Tape& tape, Backbone& net, Tape::Val embedding);

/// Pure inference paths (no gradient recording). Thread-safe for frozen
/// parameters.
Tensor embed(const Backbone& net, const Tensor& image);
Tensor embed_triplet(const Backbone& net, const Tensor& image);

/// Batched inference: images [B,C,S,S] -> [B,E] (or [B,head] when
/// use_triplet_head, rows unit-normalized).
Tensor embed_batch(const Backbone& net, const Tensor& images, bool use_triplet_head);

}  // namespace oneshot
