// Command-line front end. All work happens behind the C API of liboneshot;
// this file only parses flags, composes the run configuration and renders
// output.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oneshot.h"

namespace {

using nlohmann::json;

int fail(oneshot_status status) {
    std::cerr << "error: " << oneshot_last_error() << "\n";
    return static_cast<int>(status);
}

struct DatasetHandle {
    oneshot_dataset* ptr = nullptr;
    ~DatasetHandle() { oneshot_dataset_free(ptr); }
};

struct ModelHandle {
    oneshot_model* ptr = nullptr;
    ~ModelHandle() { oneshot_model_free(ptr); }
};

struct CString {
    char* ptr = nullptr;
    ~CString() { oneshot_string_free(ptr); }
};

/// Shared dataset-source flags: --data DIR or --synthetic N, plus split
/// selection.
struct DataArgs {
    std::string data_dir;
    int synthetic_per_class = 0;
    double test_fraction = 0.0;
    uint64_t split_seed = 0;
    std::string split_side = "all";

    void attach(CLI::App* cmd, bool with_split_side) {
        cmd->add_option("--data", data_dir, "Dataset directory (01_PET, 02_PEHD, ... layout)");
        cmd->add_option("--synthetic", synthetic_per_class, "Generate a synthetic dataset with N images per category");
        cmd->add_option("--test-fraction", test_fraction, "Stratified holdout fraction (0 disables the split)");
        cmd->add_option("--split-seed", split_seed, "Seed for the holdout shuffle");
        if (with_split_side)
            cmd->add_option("--split", split_side, "Dataset side to use: all, train or test")
                ->check(CLI::IsMember({"all", "train", "test"}));
    }

    /// Builds the requested dataset; on split != all carves out the side.
    oneshot_status open(uint64_t default_seed, DatasetHandle& out) const {
        oneshot_status st;
        DatasetHandle full;
        if (!data_dir.empty()) {
            st = oneshot_dataset_load(data_dir.c_str(), &full.ptr);
        } else if (synthetic_per_class > 0) {
            st = oneshot_dataset_synthetic(default_seed, static_cast<uint32_t>(synthetic_per_class), &full.ptr);
        } else {
            std::cerr << "error: no dataset given; use --data or --synthetic\n";
            return ONESHOT_ERR_CONFIG;
        }
        if (st != ONESHOT_OK) return st;

        if (split_side == "all" || test_fraction <= 0.0) {
            std::swap(out.ptr, full.ptr);
            return ONESHOT_OK;
        }
        DatasetHandle train, test;
        st = oneshot_dataset_split(full.ptr, test_fraction, split_seed, &train.ptr, &test.ptr);
        if (st != ONESHOT_OK) return st;
        std::swap(out.ptr, split_side == "test" ? test.ptr : train.ptr);
        return ONESHOT_OK;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void emit_progress(const char* line, void*) { std::cout << line << "\n" << std::flush; }

int cmd_train(const std::string& config_file, const DataArgs& data, const json& overrides, const std::string& out) {
    json config = json::object();
    if (!config_file.empty()) config = json::parse(read_file(config_file));
    for (const auto& [k, v] : overrides.items()) config[k] = v;

    const uint64_t seed = config.value("seed", 0ull);
    DatasetHandle ds;
    if (oneshot_status st = data.open(seed, ds); st != ONESHOT_OK) return fail(st);

    // training always runs on the train side when a holdout is requested
    DatasetHandle train_side;
    if (data.test_fraction > 0.0 && data.split_side == "all") {
        DatasetHandle test_side;
        if (oneshot_status st =
                oneshot_dataset_split(ds.ptr, data.test_fraction, data.split_seed, &train_side.ptr, &test_side.ptr);
            st != ONESHOT_OK)
            return fail(st);
    } else {
        std::swap(train_side.ptr, ds.ptr);
    }

    CString stats;
    if (oneshot_dataset_stats(train_side.ptr, &stats.ptr) == ONESHOT_OK)
        std::cerr << "training on " << stats.ptr << "\n";

    ModelHandle model;
    if (oneshot_status st = oneshot_train(train_side.ptr, config.dump().c_str(), emit_progress, nullptr, &model.ptr);
        st != ONESHOT_OK)
        return fail(st);

    if (oneshot_status st = oneshot_model_save(model.ptr, out.c_str()); st != ONESHOT_OK) return fail(st);
    std::cerr << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const DataArgs& data, const std::string& protocol, int episodes, int k,
             uint64_t seed, const std::string& out) {
    ModelHandle model;
    if (oneshot_status st = oneshot_model_load(checkpoint.c_str(), &model.ptr); st != ONESHOT_OK) return fail(st);

    DatasetHandle ds;
    if (oneshot_status st = data.open(seed, ds); st != ONESHOT_OK) return fail(st);

    CString report;
    oneshot_status st;
    if (protocol == "oneshot")
        st = oneshot_eval_one_shot(model.ptr, ds.ptr, static_cast<uint32_t>(episodes), seed, &report.ptr);
    else
        st = oneshot_eval_knn(model.ptr, ds.ptr, static_cast<uint32_t>(k), &report.ptr);
    if (st != ONESHOT_OK) return fail(st);

    CString table;
    if (oneshot_report_render(report.ptr, &table.ptr) == ONESHOT_OK) std::cout << table.ptr;

    if (!out.empty()) {
        std::ofstream f(out, std::ios::trunc);
        if (!f) {
            std::cerr << "error: cannot write report to " << out << "\n";
            return static_cast<int>(ONESHOT_ERR_IO);
        }
        f << report.ptr << "\n";
        std::cerr << "report written to " << out << "\n";
    } else {
        std::cout << report.ptr << "\n";
    }
    return 0;
}

int cmd_export(const std::string& checkpoint, const DataArgs& data, const std::string& out) {
    ModelHandle model;
    if (oneshot_status st = oneshot_model_load(checkpoint.c_str(), &model.ptr); st != ONESHOT_OK) return fail(st);
    DatasetHandle ds;
    if (oneshot_status st = data.open(0, ds); st != ONESHOT_OK) return fail(st);
    if (oneshot_status st = oneshot_export_embeddings(model.ptr, ds.ptr, out.c_str()); st != ONESHOT_OK)
        return fail(st);
    std::cerr << "embeddings written to " << out << "\n";
    return 0;
}

int cmd_gen(int per_class, uint64_t seed, const std::string& out) {
    DatasetHandle ds;
    if (oneshot_status st = oneshot_dataset_synthetic(seed, static_cast<uint32_t>(per_class), &ds.ptr);
        st != ONESHOT_OK)
        return fail(st);
    if (oneshot_status st = oneshot_dataset_materialize(ds.ptr, out.c_str()); st != ONESHOT_OK) return fail(st);
    CString stats;
    if (oneshot_dataset_stats(ds.ptr, &stats.ptr) == ONESHOT_OK)
        std::cerr << "wrote " << stats.ptr << " to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot plastic-waste classification: siamese/triplet embedding training and evaluation"};
    app.require_subcommand(1);

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train a siamese or triplet embedding network");
    std::string mode = "siamese", config_file, train_out = "checkpoint.osck";
    int epochs = -1, instances = -1, batch_size = -1;
    double lr = -1, momentum = -1, margin = -1;
    int64_t seed_flag = -1;
    DataArgs train_data;
    train->add_option("--mode", mode, "siamese or triplet")->check(CLI::IsMember({"siamese", "triplet"}));
    train->add_option("--epochs", epochs, "Training epochs (default 50 siamese / 100 triplet)");
    train->add_option("--instances", instances, "Pairs/triplets per epoch (default 5000)");
    train->add_option("--batch-size", batch_size, "Batch size (default 32)");
    train->add_option("--lr", lr, "Learning rate (default 0.001)");
    train->add_option("--momentum", momentum, "SGD momentum (default 0.9)");
    train->add_option("--margin", margin, "Triplet margin (default 0.4)");
    train->add_option("--seed", seed_flag, "Run seed (default 0)");
    train->add_option("--config", config_file, "JSON config file; flags override its fields");
    train->add_option("--out", train_out, "Checkpoint output path");
    train_data.attach(train, false);

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (1-shot episodes or leave-one-out KNN)");
    std::string eval_ckpt, protocol = "oneshot", eval_out;
    int episodes = 400, k = 3;
    uint64_t eval_seed = 0;
    DataArgs eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--protocol", protocol, "oneshot or knn")->check(CLI::IsMember({"oneshot", "knn"}));
    eval->add_option("--episodes", episodes, "Episodes for the oneshot protocol (default 400)");
    eval->add_option("--k", k, "Neighbour count for knn")->check(CLI::IsMember({"3", "5", "7"}));
    eval->add_option("--seed", eval_seed, "Episode-sampling seed");
    eval->add_option("--out", eval_out, "Write the JSON report here (default: stdout)");
    eval_data.attach(eval, true);

    // export-embeddings --------------------------------------------------------
    auto* exp = app.add_subcommand("export-embeddings", "Embed a dataset and write an OSEM file");
    std::string exp_ckpt, exp_out = "embeddings.osem";
    DataArgs exp_data;
    exp->add_option("--checkpoint", exp_ckpt, "Checkpoint file")->required();
    exp->add_option("--out", exp_out, "Output path");
    exp_data.attach(exp, true);

    // gen-synthetic -------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-synthetic", "Materialize a synthetic dataset as PNG files");
    int per_class = 10;
    uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--per-class", per_class, "Images per category")->required();
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--out", gen_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ONESHOT_ERR_CONFIG);
    }

    try {
        if (train->parsed()) {
            json overrides = json::object();
            overrides["mode"] = mode;
            if (epochs >= 0) overrides["epochs"] = epochs;
            if (instances > 0) overrides["instances_per_epoch"] = instances;
            if (batch_size > 0) overrides["batch_size"] = batch_size;
            if (lr > 0) overrides["lr"] = lr;
            if (momentum >= 0) overrides["momentum"] = momentum;
            if (margin > 0) overrides["margin"] = margin;
            if (seed_flag >= 0) overrides["seed"] = static_cast<uint64_t>(seed_flag);
            return cmd_train(config_file, train_data, overrides, train_out);
        }
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, protocol, episodes, k, eval_seed, eval_out);
        if (exp->parsed()) return cmd_export(exp_ckpt, exp_data, exp_out);
        if (gen->parsed()) return cmd_gen(per_class, gen_seed, gen_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ONESHOT_ERR_CONFIG);
    }
    return 0;
}
