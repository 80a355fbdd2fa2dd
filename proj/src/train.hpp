#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "backbone.hpp"
#include "dataset.hpp"
#include "tape.hpp"

namespace oneshot {

struct TrainConfig {
    TrainMode mode = TrainMode::siamese;
    int epochs = -1;  // -1 resolves to the mode default: 50 siamese, 100 triplet
    int instances_per_epoch = 5000;
    int batch_size = 32;
    float lr = 0.001f;
    float momentum = 0.9f;
    float margin = 0.4f;
    uint64_t seed = 0;
    BackboneConfig backbone;  // include_triplet_head is forced on in triplet mode

    int resolved_epochs() const { return epochs >= 0 ? epochs : (mode == TrainMode::siamese ? 50 : 100); }
    void validate() const;
};

struct EpochRecord {
    double mean_loss = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    uint64_t param_checksum = 0;
};

using ProgressFn = std::function<void(int epoch, double mean_loss, double seconds)>;

/// Twin forward with one shared parameter set; score = sigmoid(w * d + c)
/// where d is the (non-squared) embedding distance and w, c are the
/// learnable score-head scalars.
Tape::Val siamese_score_on_tape(Tape& tape, Backbone& net, const Tensor& a, const Tensor& b);

/// Cross-entropy on a twin score. label: 0 same category, 1 different.
Tape::Val siamese_pair_loss_on_tape(Tape& tape, Backbone& net, const Tensor& a, const Tensor& b, int label);

/// Three-branch forward through the normalized head; clamped margin loss.
Tape::Val triplet_sample_loss_on_tape(Tape& tape, Backbone& net, const Tensor& anchor, const Tensor& positive,
                                      const Tensor& negative, float margin);

/// Plain helpers (no gradients).
float siamese_score(const Backbone& net, const Tensor& a, const Tensor& b);
float siamese_loss(float score, int label);
/// max(0, ||fa-fp||^2 - ||fa-fn||^2 + margin)
float triplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn, float margin);

/// Full training loop: per epoch draws instances_per_epoch samples, processes
/// them in batches (mean loss per batch, one SGD step per batch).
/// Deterministic for a fixed seed and thread count. Throws NumericError with
/// epoch/batch coordinates when the loss leaves the finite range.
std::pair<Backbone, TrainHistory> train(const Dataset& dataset, const TrainConfig& config,
                                        const ProgressFn& progress = {});

uint64_t params_checksum(const ParamSet& params);

/// Worker-thread count: ONESHOT_THREADS when set, else hardware concurrency,
/// capped at 8.
int resolve_threads();

/// Raises the malloc mmap/trim thresholds once per process so per-sample
/// scratch stays in the arenas.
void tune_allocator_once();

}  // namespace oneshot
