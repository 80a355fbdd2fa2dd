#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "errors.hpp"
#include "eval.hpp"
#include "oracles.hpp"
#include "runconfig.hpp"
#include "serialize.hpp"
#include "train.hpp"

using namespace oneshot;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("oneshot_fmt_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.input_size = 12;
    c.convs = {{4, 3}, {8, 3}};
    c.embedding_dim = 16;
    c.triplet_head_dim = 6;
    c.include_triplet_head = true;
    return c;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoint: bit-exact round trip including provenance") {
    TempDir tmp;
    Backbone net = build_backbone(tiny_config(), 5);
    const auto path = (tmp.path / "model.osck").string();
    save_checkpoint(path, net, TrainMode::triplet, 42, 7);

    LoadedModel loaded = load_checkpoint(path);
    CHECK(loaded.mode == TrainMode::triplet);
    CHECK(loaded.seed == 42);
    CHECK(loaded.epochs_completed == 7);
    CHECK(loaded.backbone.config.input_size == 12);
    CHECK(loaded.backbone.config.include_triplet_head);
    REQUIRE(loaded.backbone.params.size() == net.params.size());
    for (size_t i = 0; i < net.params.size(); ++i) {
        CHECK(loaded.backbone.params.at(i).name == net.params.at(i).name);
        for (size_t j = 0; j < net.params.at(i).value.size(); ++j)
            CHECK(loaded.backbone.params.at(i).value[j] == net.params.at(i).value[j]);
    }

    // a second save of the loaded model reproduces the file byte for byte
    const auto path2 = (tmp.path / "model2.osck").string();
    save_checkpoint(path2, loaded.backbone, loaded.mode, loaded.seed, loaded.epochs_completed);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint: magic and version are verified") {
    TempDir tmp;
    const auto path = (tmp.path / "junk.osck").string();
    std::ofstream out(path, std::ios::binary);
    out << "NOPE this is not a checkpoint";
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), IoError);
    CHECK_THROWS_AS(load_checkpoint((tmp.path / "missing.osck").string()), IoError);

    // corrupt the version field of a valid checkpoint
    Backbone net = build_backbone(tiny_config(), 5);
    const auto vpath = (tmp.path / "v.osck").string();
    save_checkpoint(vpath, net, TrainMode::siamese, 0, 0);
    auto bytes = slurp(vpath);
    bytes[4] = 99;
    std::ofstream vo(vpath, std::ios::binary | std::ios::trunc);
    vo.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    vo.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(vpath), doctest::Contains("version"), IoError);
}

TEST_CASE("checkpoint: saved mid-pipeline reproduces downstream evaluation exactly") {
    TempDir tmp;
    Dataset ds = gen_synthetic(9, 3, 12);
    TrainConfig cfg;
    cfg.mode = TrainMode::triplet;
    cfg.backbone = tiny_config();
    cfg.epochs = 1;
    cfg.instances_per_epoch = 8;
    cfg.batch_size = 4;
    cfg.seed = 77;
    auto [net, history] = train(ds, cfg);

    const EvalReport before = eval_knn(build_index(net, ds, TrainMode::triplet), 3);
    const auto path = (tmp.path / "trained.osck").string();
    save_checkpoint(path, net, cfg.mode, cfg.seed, 1);
    LoadedModel loaded = load_checkpoint(path);
    const EvalReport after = eval_knn(build_index(loaded.backbone, ds, TrainMode::triplet), 3);
    CHECK(before.to_json() == after.to_json());
}

TEST_CASE("embeddings: layout, size formula, round trip") {
    TempDir tmp;
    Rng rng(10);
    EmbeddingIndex index;
    index.dim = 6;
    for (int i = 0; i < 7; ++i) {
        EmbeddingEntry e;
        e.id = "01_PET/img_" + std::to_string(i) + ".png";
        e.category = static_cast<Category>(i % 5);
        for (int j = 0; j < 6; ++j) e.vec.push_back(static_cast<float>(rng.uniform_real(-1, 1)));
        index.entries.push_back(std::move(e));
    }
    const auto path = (tmp.path / "emb.osem").string();
    write_embeddings(path, index);

    // size = 16 + sum(2 + |id| + 1 + 4*dim)
    size_t expect = 16;
    for (const auto& e : index.entries) expect += 2 + e.id.size() + 1 + 4 * 6;
    CHECK(fs::file_size(path) == expect);
    CHECK(embeddings_file_size(index) == expect);

    auto bytes = slurp(path);
    CHECK(bytes[0] == 'O');
    CHECK(bytes[1] == 'S');
    CHECK(bytes[2] == 'E');
    CHECK(bytes[3] == 'M');
    // little-endian version 1, count 7, dim 6
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 7);
    CHECK(static_cast<unsigned char>(bytes[12]) == 6);
    // first entry: id length u16 LE, then id, then category numeral u8
    CHECK(static_cast<unsigned char>(bytes[16]) == index.entries[0].id.size());
    CHECK(static_cast<unsigned char>(bytes[17]) == 0);
    const size_t cat_off = 18 + index.entries[0].id.size();
    CHECK(static_cast<unsigned char>(bytes[cat_off]) == category_numeral(index.entries[0].category));

    EmbeddingIndex back = read_embeddings(path);
    REQUIRE(back.size() == index.size());
    CHECK(back.dim == index.dim);
    for (size_t i = 0; i < index.size(); ++i) {
        CHECK(back.entries[i].id == index.entries[i].id);
        CHECK(back.entries[i].category == index.entries[i].category);
        for (size_t j = 0; j < 6; ++j) CHECK(back.entries[i].vec[j] == index.entries[i].vec[j]);
    }
}

TEST_CASE("embeddings: re-imported index evaluates identically") {
    TempDir tmp;
    Backbone net = build_backbone(tiny_config(), 21);
    Dataset ds = gen_synthetic(22, 4, 12);
    EmbeddingIndex index = build_index(net, ds, TrainMode::triplet);
    const EvalReport before = eval_knn(index, 3);

    const auto path = (tmp.path / "roundtrip.osem").string();
    write_embeddings(path, index);
    EmbeddingIndex back = read_embeddings(path);
    const EvalReport after = eval_knn(back, 3);
    CHECK(before.to_json() == after.to_json());
}

TEST_CASE("embeddings: magic verified, trailing bytes rejected") {
    TempDir tmp;
    const auto path = (tmp.path / "bad.osem").string();
    std::ofstream out(path, std::ios::binary);
    out << "OSCKxxxxxxxxxxxxxxxx";
    out.close();
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("magic"), IoError);
}

TEST_CASE("run config: defaults are the training defaults") {
    RunConfig rc = parse_run_config("{}");
    CHECK(rc.train.mode == TrainMode::siamese);
    CHECK(rc.train.resolved_epochs() == 50);
    CHECK(rc.train.instances_per_epoch == 5000);
    CHECK(rc.train.batch_size == 32);
    CHECK(rc.train.lr == 0.001f);
    CHECK(rc.train.momentum == 0.9f);
    CHECK(rc.train.margin == 0.4f);
    CHECK(rc.episodes == 400);
    CHECK(rc.k == 3);

    RunConfig tri = parse_run_config(R"({"mode":"triplet"})");
    CHECK(tri.train.resolved_epochs() == 100);
}

TEST_CASE("run config: unknown keys and bad values rejected with diagnostics") {
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"leraning_rate":0.1})"), doctest::Contains("leraning_rate"),
                         std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("not json"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("[1,2]"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"mode":"both"})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"epochs":"many"})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"lr":0})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"k":4})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"test_fraction":1.5})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"eval_split":"half"})"), std::invalid_argument);
}

TEST_CASE("run config: full document parses and flags override via merge") {
    const std::string merged = merge_config_json(
        R"({"mode":"triplet","epochs":10,"lr":0.01})", R"({"epochs":2,"seed":5})");
    RunConfig rc = parse_run_config(merged);
    CHECK(rc.train.mode == TrainMode::triplet);
    CHECK(rc.train.epochs == 2);
    CHECK(rc.train.lr == 0.01f);
    CHECK(rc.train.seed == 5);
}
