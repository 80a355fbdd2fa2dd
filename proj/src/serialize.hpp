#pragma once

#include <cstdint>
#include <string>

#include "backbone.hpp"
#include "eval.hpp"

namespace oneshot {

/// Trained model plus its provenance, as stored in a checkpoint.
struct LoadedModel {
    Backbone backbone;
    TrainMode mode = TrainMode::siamese;
    uint64_t seed = 0;
    uint32_t epochs_completed = 0;
};

/// Checkpoint file ("OSCK"): version, provenance, backbone topology and all
/// named tensors as little-endian float32. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const Backbone& net, TrainMode mode, uint64_t seed,
                     uint32_t epochs_completed);
LoadedModel load_checkpoint(const std::string& path);

/// Embedding file ("OSEM"): version, count, dim, then per entry
/// id-length/id/category-numeral/vector, all integers little-endian.
void write_embeddings(const std::string& path, const EmbeddingIndex& index);
EmbeddingIndex read_embeddings(const std::string& path);

/// Exact byte size of an OSEM file for the given index.
size_t embeddings_file_size(const EmbeddingIndex& index);

}  // namespace oneshot
