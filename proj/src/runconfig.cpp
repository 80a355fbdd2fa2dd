#include "runconfig.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace oneshot {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

template <typename T>
T get_as(const json& j, const char* key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        bad(std::string("field '") + key + "' has the wrong type");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        bad(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) bad("top level must be an object");

    RunConfig rc;
    for (const auto& [key, value] : j.items()) {
        if (key == "mode") {
            const auto s = get_as<std::string>(value, "mode");
            if (s == "siamese")
                rc.train.mode = TrainMode::siamese;
            else if (s == "triplet")
                rc.train.mode = TrainMode::triplet;
            else
                bad("mode must be 'siamese' or 'triplet', got '" + s + "'");
        } else if (key == "epochs") {
            rc.train.epochs = get_as<int>(value, "epochs");
            if (rc.train.epochs < 0) bad("epochs must be >= 0");
        } else if (key == "instances_per_epoch") {
            rc.train.instances_per_epoch = get_as<int>(value, "instances_per_epoch");
        } else if (key == "batch_size") {
            rc.train.batch_size = get_as<int>(value, "batch_size");
        } else if (key == "lr") {
            rc.train.lr = get_as<float>(value, "lr");
        } else if (key == "momentum") {
            rc.train.momentum = get_as<float>(value, "momentum");
        } else if (key == "margin") {
            rc.train.margin = get_as<float>(value, "margin");
        } else if (key == "seed") {
            rc.train.seed = get_as<uint64_t>(value, "seed");
        } else if (key == "data") {
            rc.data_dir = get_as<std::string>(value, "data");
        } else if (key == "synthetic_per_class") {
            rc.synthetic_per_class = get_as<int>(value, "synthetic_per_class");
            if (rc.synthetic_per_class < 0) bad("synthetic_per_class must be >= 0");
        } else if (key == "test_fraction") {
            rc.test_fraction = get_as<double>(value, "test_fraction");
            if (rc.test_fraction < 0.0 || rc.test_fraction >= 1.0) bad("test_fraction must be in [0,1)");
        } else if (key == "split_seed") {
            rc.split_seed = get_as<uint64_t>(value, "split_seed");
        } else if (key == "eval_split") {
            rc.eval_split = get_as<std::string>(value, "eval_split");
            if (rc.eval_split != "all" && rc.eval_split != "train" && rc.eval_split != "test")
                bad("eval_split must be all, train or test");
        } else if (key == "protocol") {
            rc.protocol = get_as<std::string>(value, "protocol");
            if (rc.protocol != "oneshot" && rc.protocol != "knn") bad("protocol must be oneshot or knn");
        } else if (key == "episodes") {
            rc.episodes = get_as<int>(value, "episodes");
            if (rc.episodes <= 0) bad("episodes must be positive");
        } else if (key == "k") {
            rc.k = get_as<int>(value, "k");
            if (rc.k != 3 && rc.k != 5 && rc.k != 7) bad("k must be 3, 5 or 7");
        } else if (key == "out") {
            rc.out = get_as<std::string>(value, "out");
        } else if (key == "checkpoint") {
            rc.checkpoint = get_as<std::string>(value, "checkpoint");
        } else {
            bad("unknown key '" + key + "'");
        }
    }
    rc.train.validate();
    return rc;
}

std::string merge_config_json(const std::string& a, const std::string& b) {
    json ja = a.empty() ? json::object() : json::parse(a);
    json jb = b.empty() ? json::object() : json::parse(b);
    for (const auto& [key, value] : jb.items()) ja[key] = value;
    return ja.dump();
}

}  // namespace oneshot
