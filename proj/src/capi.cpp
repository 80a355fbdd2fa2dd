#include "oneshot.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "backbone.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "runconfig.hpp"
#include "serialize.hpp"
#include "train.hpp"

using namespace oneshot;

struct oneshot_dataset {
    Dataset ds;
};

struct oneshot_model {
    LoadedModel m;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
oneshot_status guarded(Fn&& fn) {
    try {
        fn();
        return ONESHOT_OK;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return ONESHOT_ERR_CONFIG;
    } catch (const NumericError& e) {
        g_last_error = e.what();
        return ONESHOT_ERR_NUMERIC;
    } catch (const IoError& e) {
        g_last_error = e.what();
        return ONESHOT_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return ONESHOT_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return ONESHOT_ERR_INTERNAL;
    }
}

oneshot_status require(bool cond, const char* msg) {
    if (cond) return ONESHOT_OK;
    g_last_error = msg;
    return ONESHOT_ERR_CONFIG;
}

}  // namespace

extern "C" {

const char* oneshot_version(void) { return "1.0.0"; }

const char* oneshot_last_error(void) { return g_last_error.c_str(); }

oneshot_status oneshot_dataset_load(const char* root, oneshot_dataset** out) {
    if (auto s = require(root && out, "oneshot_dataset_load: null argument")) return s;
    return guarded([&] {
        auto* h = new oneshot_dataset{load_dataset(root)};
        *out = h;
    });
}

oneshot_status oneshot_dataset_synthetic(uint64_t seed, uint32_t per_class, oneshot_dataset** out) {
    if (auto s = require(out != nullptr, "oneshot_dataset_synthetic: null output")) return s;
    return guarded([&] {
        auto* h = new oneshot_dataset{gen_synthetic(seed, static_cast<int>(per_class))};
        *out = h;
    });
}

oneshot_status oneshot_dataset_materialize(const oneshot_dataset* ds, const char* root) {
    if (auto s = require(ds && root, "oneshot_dataset_materialize: null argument")) return s;
    return guarded([&] { materialize(ds->ds, root); });
}

oneshot_status oneshot_dataset_split(const oneshot_dataset* ds, double test_fraction, uint64_t seed,
                                     oneshot_dataset** train_out, oneshot_dataset** test_out) {
    if (auto s = require(ds && train_out && test_out, "oneshot_dataset_split: null argument")) return s;
    return guarded([&] {
        auto [train_ds, test_ds] = split(ds->ds, test_fraction, seed);
        *train_out = new oneshot_dataset{std::move(train_ds)};
        *test_out = new oneshot_dataset{std::move(test_ds)};
    });
}

uint32_t oneshot_dataset_size(const oneshot_dataset* ds) {
    return ds ? static_cast<uint32_t>(ds->ds.size()) : 0;
}

oneshot_status oneshot_dataset_stats(const oneshot_dataset* ds, char** out) {
    if (auto s = require(ds && out, "oneshot_dataset_stats: null argument")) return s;
    return guarded([&] { *out = dup_string(ds->ds.stats()); });
}

void oneshot_dataset_free(oneshot_dataset* ds) { delete ds; }

oneshot_status oneshot_train(const oneshot_dataset* ds, const char* config_json, oneshot_progress_fn progress,
                             void* user, oneshot_model** out) {
    if (auto s = require(ds && out, "oneshot_train: null argument")) return s;
    return guarded([&] {
        const RunConfig rc = parse_run_config(config_json ? config_json : "{}");
        ProgressFn cb;
        if (progress) {
            cb = [progress, user](int epoch, double mean_loss, double seconds) {
                nlohmann::ordered_json j;
                j["epoch"] = epoch;
                j["mean_loss"] = mean_loss;
                j["seconds"] = seconds;
                progress(j.dump().c_str(), user);
            };
        }
        auto [net, history] = train(ds->ds, rc.train, cb);
        auto* h = new oneshot_model;
        h->m.backbone = std::move(net);
        h->m.mode = rc.train.mode;
        h->m.seed = rc.train.seed;
        h->m.epochs_completed = static_cast<uint32_t>(history.epochs.size());
        *out = h;
    });
}

oneshot_status oneshot_model_save(const oneshot_model* m, const char* path) {
    if (auto s = require(m && path, "oneshot_model_save: null argument")) return s;
    return guarded([&] { save_checkpoint(path, m->m.backbone, m->m.mode, m->m.seed, m->m.epochs_completed); });
}

oneshot_status oneshot_model_load(const char* path, oneshot_model** out) {
    if (auto s = require(path && out, "oneshot_model_load: null argument")) return s;
    return guarded([&] {
        auto* h = new oneshot_model{load_checkpoint(path)};
        *out = h;
    });
}

const char* oneshot_model_mode(const oneshot_model* m) {
    if (!m) return "";
    return m->m.mode == TrainMode::triplet ? "triplet" : "siamese";
}

void oneshot_model_free(oneshot_model* m) { delete m; }

oneshot_status oneshot_eval_one_shot(const oneshot_model* m, const oneshot_dataset* ds, uint32_t episodes,
                                     uint64_t seed, char** report_json) {
    if (auto s = require(m && ds && report_json, "oneshot_eval_one_shot: null argument")) return s;
    return guarded([&] {
        const EvalReport report =
            eval_one_shot(m->m.backbone, m->m.mode, ds->ds, static_cast<int>(episodes), seed);
        *report_json = dup_string(report.to_json());
    });
}

oneshot_status oneshot_eval_knn(const oneshot_model* m, const oneshot_dataset* ds, uint32_t k, char** report_json) {
    if (auto s = require(m && ds && report_json, "oneshot_eval_knn: null argument")) return s;
    return guarded([&] {
        const EmbeddingIndex index = build_index(m->m.backbone, ds->ds, m->m.mode);
        EvalReport report = eval_knn(index, static_cast<int>(k));
        report.embedding = m->m.mode == TrainMode::triplet ? "triplet" : "siamese";
        *report_json = dup_string(report.to_json());
    });
}

oneshot_status oneshot_report_render(const char* report_json, char** table) {
    if (auto s = require(report_json && table, "oneshot_report_render: null argument")) return s;
    return guarded([&] {
        const auto j = nlohmann::json::parse(report_json);
        EvalReport r;
        r.protocol = j.at("protocol").get<std::string>();
        r.embedding = j.at("embedding").get<std::string>();
        if (j.contains("k")) r.k = j.at("k").get<int>();
        r.dim = j.at("dim").get<int>();
        r.average = j.at("average").get<double>();
        r.episodes_or_queries = j.at("episodes_or_queries").get<int>();
        for (Category c : kAllCategories) {
            const auto& v = j.at("per_category_accuracy").at(category_name(c));
            const size_t i = static_cast<size_t>(c);
            r.present[i] = !v.is_null();
            if (r.present[i]) r.per_category[i] = v.get<double>();
        }
        *table = dup_string(r.to_table());
    });
}

oneshot_status oneshot_export_embeddings(const oneshot_model* m, const oneshot_dataset* ds, const char* path) {
    if (auto s = require(m && ds && path, "oneshot_export_embeddings: null argument")) return s;
    return guarded([&] {
        const EmbeddingIndex index = build_index(m->m.backbone, ds->ds, m->m.mode);
        write_embeddings(path, index);
    });
}

void oneshot_string_free(char* s) { std::free(s); }

}  // extern "C"
