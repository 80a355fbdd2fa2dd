#pragma once

#include <cstdint>
#include <string>

#include "train.hpp"

namespace oneshot {

/// One JSON document drives a whole run: training settings, dataset source,
/// split selection, evaluation options and output paths. Every field is
/// optional; defaults match TrainConfig.
struct RunConfig {
    TrainConfig train;
    std::string data_dir;           // image tree; empty when synthetic
    int synthetic_per_class = 0;    // > 0 selects the synthetic generator
    double test_fraction = 0.0;     // 0 = no split
    uint64_t split_seed = 0;
    std::string eval_split = "all";  // all | train | test
    std::string protocol = "oneshot";
    int episodes = 400;
    int k = 3;
    std::string out;
    std::string checkpoint;
};

/// Strict parse: unknown keys and wrong types are rejected with a diagnostic.
RunConfig parse_run_config(const std::string& json_text);

/// Merges b over a at the JSON level (b wins), returning the merged document.
std::string merge_config_json(const std::string& a, const std::string& b);

}  // namespace oneshot
