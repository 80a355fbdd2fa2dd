#include <doctest.h>

#include <cmath>

#include "eval.hpp"
#include "oracles.hpp"
#include "train.hpp"

using namespace oneshot;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.input_size = 12;
    c.convs = {{4, 3}, {8, 3}};
    c.embedding_dim = 16;
    c.triplet_head_dim = 6;
    c.include_triplet_head = true;
    return c;
}

EmbeddingIndex stub_index(const std::vector<std::vector<float>>& vecs, const std::vector<Category>& cats) {
    EmbeddingIndex index;
    index.dim = static_cast<int>(vecs.front().size());
    for (size_t i = 0; i < vecs.size(); ++i)
        index.entries.push_back({"e" + std::to_string(i), cats[i], vecs[i]});
    return index;
}

std::vector<float> random_vec(Rng& rng, int dim) {
    std::vector<float> v(static_cast<size_t>(dim));
    for (float& x : v) x = static_cast<float>(rng.uniform_real(-1.0, 1.0));
    return v;
}

}  // namespace

TEST_CASE("build_index: entries, dims, duplicates, determinism, head checks") {
    Backbone net = build_backbone(tiny_config(), 3);
    Dataset ds = gen_synthetic(4, 1, 12);
    REQUIRE(ds.size() == 5);
    // plant an exact duplicate of image 0 under a new id
    LabeledImage dup = ds.images[0];
    dup.id = "01_PET/duplicate.png";
    ds.images.push_back(dup);
    ds.rebuild_index();

    EmbeddingIndex idx = build_index(net, ds, TrainMode::siamese);
    CHECK(idx.size() == 6);
    CHECK(idx.dim == 16);
    for (size_t i = 0; i < idx.size(); ++i) CHECK(idx.entries[i].id == ds.images[i].id);
    for (int j = 0; j < idx.dim; ++j) CHECK(idx.entries[0].vec[static_cast<size_t>(j)] == idx.entries[5].vec[static_cast<size_t>(j)]);

    EmbeddingIndex idx2 = build_index(net, ds, TrainMode::siamese);
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < idx.dim; ++j)
            CHECK(idx.entries[i].vec[static_cast<size_t>(j)] == idx2.entries[i].vec[static_cast<size_t>(j)]);

    EmbeddingIndex tri = build_index(net, ds, TrainMode::triplet);
    CHECK(tri.dim == 6);

    Backbone headless = build_backbone([] {
        BackboneConfig c;
        c.input_size = 12;
        c.convs = {{4, 3}, {8, 3}};
        c.embedding_dim = 16;
        return c;
    }(), 3);
    CHECK_THROWS_AS(build_index(headless, ds, TrainMode::triplet), std::invalid_argument);
}

TEST_CASE("nearest_support: separable one-hot stubs are classified perfectly") {
    // one-hot embeddings per category; queries equal their category's axis
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    for (int c = 0; c < kCategoryCount; ++c) {
        std::vector<float> v(5, 0.0f);
        v[static_cast<size_t>(c)] = 1.0f;
        vecs.push_back(v);  // support entry
        cats.push_back(static_cast<Category>(c));
        std::vector<float> q = v;
        q[(static_cast<size_t>(c) + 1) % 5] = 0.05f;  // slightly perturbed query
        vecs.push_back(q);
        cats.push_back(static_cast<Category>(c));
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    const std::vector<int> support = {0, 2, 4, 6, 8};
    for (int q : {1, 3, 5, 7, 9})
        CHECK(nearest_support(idx, q, support) == idx.entries[static_cast<size_t>(q)].category);
}

TEST_CASE("nearest_support: equals brute-force argmin; invariant to monotone transforms") {
    Rng rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<std::vector<float>> vecs;
        std::vector<Category> cats;
        vecs.push_back(random_vec(rng, 8));
        cats.push_back(Category::PET);  // query, category irrelevant
        for (int c = 0; c < kCategoryCount; ++c) {
            vecs.push_back(random_vec(rng, 8));
            cats.push_back(static_cast<Category>(c));
        }
        EmbeddingIndex idx = stub_index(vecs, cats);
        const std::vector<int> support = {1, 2, 3, 4, 5};

        // independent argmin over the 5 squared distances
        double best = 0.0;
        int best_s = -1;
        for (int s : support) {
            double d = 0.0;
            for (int j = 0; j < 8; ++j) {
                const double diff = static_cast<double>(idx.entries[static_cast<size_t>(s)].vec[static_cast<size_t>(j)]) -
                                    idx.entries[0].vec[static_cast<size_t>(j)];
                d += diff * diff;
            }
            // monotone transform must not change the argmin
            d = std::sqrt(d) * 3.0 + 1.0;
            if (best_s < 0 || d < best) {
                best = d;
                best_s = s;
            }
        }
        CHECK(nearest_support(idx, 0, support) == idx.entries[static_cast<size_t>(best_s)].category);
    }
}

TEST_CASE("nearest_support: validation") {
    Rng rng(10);
    std::vector<std::vector<float>> vecs = {random_vec(rng, 4), random_vec(rng, 4), random_vec(rng, 4)};
    std::vector<Category> cats = {Category::PET, Category::PP, Category::PP};
    EmbeddingIndex idx = stub_index(vecs, cats);
    CHECK_THROWS_AS(nearest_support(idx, 0, {1, 2}), std::invalid_argument);  // duplicate category
    CHECK_THROWS_AS(nearest_support(idx, 0, {}), std::invalid_argument);
}

TEST_CASE("one_shot_episode: duplicate of the sample wins at distance zero") {
    Backbone net = build_backbone(tiny_config(), 12);
    Dataset ds = gen_synthetic(13, 2, 12);
    const LabeledImage& sample = ds.images[static_cast<size_t>(ds.of(Category::PP)[0])];
    std::vector<const LabeledImage*> support;
    for (Category c : kAllCategories) {
        // for PP use the sample image itself (duplicate content)
        support.push_back(c == Category::PP ? &sample
                                            : &ds.images[static_cast<size_t>(ds.of(c)[1])]);
    }
    CHECK(one_shot_episode(net, TrainMode::siamese, sample, support) == Category::PP);
    CHECK(one_shot_episode(net, TrainMode::triplet, sample, support) == Category::PP);

    // support must cover every category exactly once
    std::vector<const LabeledImage*> partial(support.begin(), support.begin() + 4);
    CHECK_THROWS_AS(one_shot_episode(net, TrainMode::siamese, sample, partial), std::invalid_argument);
    std::vector<const LabeledImage*> dup = support;
    dup[0] = support[1];
    CHECK_THROWS_AS(one_shot_episode(net, TrainMode::siamese, sample, dup), std::invalid_argument);
}

TEST_CASE("eval_one_shot: perfect on duplicate-only categories, reproducible, protocol fields") {
    // every category is five copies of one image: the nearest support always
    // has distance exactly zero and matches the query category
    Backbone net = build_backbone(tiny_config(), 14);
    Dataset base = gen_synthetic(15, 1, 12);
    Dataset ds;
    for (const auto& img : base.images)
        for (int k = 0; k < 5; ++k) {
            LabeledImage copy = img;
            copy.id += "#" + std::to_string(k);
            ds.images.push_back(std::move(copy));
        }
    ds.rebuild_index();

    EvalReport r = eval_one_shot(net, TrainMode::siamese, ds, 50, 99);
    CHECK(r.average == 100.0);
    CHECK(r.protocol == "oneshot");
    CHECK(r.episodes_or_queries == 50);
    CHECK(r.ways == 5);
    CHECK_FALSE(r.degraded);

    EvalReport r2 = eval_one_shot(net, TrainMode::siamese, ds, 50, 99);
    CHECK(r.to_json() == r2.to_json());
}

TEST_CASE("episode decision over random stubs is uniformly correct at chance rate") {
    // 400 episodes, each with a random query and 5 random supports: the
    // correct-category support wins with probability 1/5; binomial 3 sigma
    Rng rng(400);
    int correct = 0;
    const int episodes = 400;
    for (int ep = 0; ep < episodes; ++ep) {
        std::vector<std::vector<float>> vecs;
        std::vector<Category> cats;
        const Category qc = static_cast<Category>(rng.uniform(5));
        vecs.push_back(random_vec(rng, 16));
        cats.push_back(qc);
        std::vector<int> support;
        for (int c = 0; c < kCategoryCount; ++c) {
            vecs.push_back(random_vec(rng, 16));
            cats.push_back(static_cast<Category>(c));
            support.push_back(c + 1);
        }
        EmbeddingIndex idx = stub_index(vecs, cats);
        if (nearest_support(idx, 0, support) == qc) ++correct;
    }
    const double acc = 100.0 * correct / episodes;
    CHECK(acc > 20.0 - 6.0);
    CHECK(acc < 20.0 + 6.0);
}

TEST_CASE("knn_classify: duplicate cluster wins; k bounds checked") {
    Rng rng(20);
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    std::vector<float> q = random_vec(rng, 6);
    vecs.push_back(q);
    cats.push_back(Category::PS);
    for (int i = 0; i < 4; ++i) {  // four exact copies of the query, PS
        vecs.push_back(q);
        cats.push_back(Category::PS);
    }
    for (int i = 0; i < 5; ++i) {  // far-away noise in other categories
        std::vector<float> v = random_vec(rng, 6);
        for (float& x : v) x += 10.0f;
        vecs.push_back(v);
        cats.push_back(static_cast<Category>(i % 4));
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    CHECK(knn_classify(idx, 0, 3) == Category::PS);
    CHECK_THROWS_AS(knn_classify(idx, 0, 10), std::invalid_argument);
    CHECK_THROWS_AS(knn_classify(idx, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(knn_classify(idx, 42, 3), std::invalid_argument);
}

TEST_CASE("knn_classify: singleton vote tie falls to the nearest mean distance") {
    // three nearest neighbours in three distinct categories at distances
    // 1, 2, 3: PS at distance 1 wins the mean-distance tie-break
    std::vector<std::vector<float>> vecs = {
        {0.0f, 0.0f}, {1.0f, 0.0f}, {2.0f, 0.0f}, {3.0f, 0.0f}, {50.0f, 0.0f}};
    std::vector<Category> cats = {Category::PET, Category::PS, Category::PET, Category::PP, Category::OTHER};
    EmbeddingIndex idx = stub_index(vecs, cats);
    CHECK(knn_classify(idx, 0, 3) == Category::PS);

    // exact same distances for two categories: lowest resin numeral wins
    std::vector<std::vector<float>> vecs2 = {{0.0f, 0.0f}, {1.0f, 0.0f}, {-1.0f, 0.0f}, {9.0f, 9.0f}};
    std::vector<Category> cats2 = {Category::OTHER, Category::PS, Category::PP, Category::PET};
    EmbeddingIndex idx2 = stub_index(vecs2, cats2);
    CHECK(knn_classify(idx2, 0, 2) == Category::PP);  // numeral 5 < 6
}

TEST_CASE("knn_classify: zero mismatches against the exhaustive-sort oracle") {
    Rng rng(777);
    const int n = 200;
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    for (int i = 0; i < n; ++i) {
        vecs.push_back(random_vec(rng, 16));
        cats.push_back(static_cast<Category>(rng.uniform(5)));
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    for (int k : {3, 5, 7}) {
        int mismatches = 0;
        for (int q = 0; q < n; ++q)
            if (knn_classify(idx, q, k) != oracle::knn(vecs, cats, q, k)) ++mismatches;
        CHECK(mismatches == 0);
    }
}

TEST_CASE("eval_knn: tight clusters score 100 in every column") {
    Rng rng(31);
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    for (int c = 0; c < kCategoryCount; ++c) {
        for (int i = 0; i < 6; ++i) {
            std::vector<float> v(4, 0.0f);
            v[0] = static_cast<float>(10.0 * c);
            for (float& x : v) x += static_cast<float>(rng.uniform_real(-0.1, 0.1));
            vecs.push_back(v);
            cats.push_back(static_cast<Category>(c));
        }
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    EvalReport r = eval_knn(idx, 3);
    for (Category c : kAllCategories) CHECK(r.per_category[static_cast<size_t>(c)] == 100.0);
    CHECK(r.average == 100.0);
    CHECK(r.episodes_or_queries == 30);
    CHECK(r.k == 3);
}

TEST_CASE("eval_knn: per-category and average match the oracle exactly") {
    Rng rng(32);
    const int n = 100;
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    for (int i = 0; i < n; ++i) {
        vecs.push_back(random_vec(rng, 8));
        cats.push_back(static_cast<Category>(rng.uniform(5)));
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    EvalReport r = eval_knn(idx, 5);

    std::array<int, kCategoryCount> total{}, correct{};
    for (int q = 0; q < n; ++q) {
        total[static_cast<size_t>(cats[static_cast<size_t>(q)])]++;
        if (oracle::knn(vecs, cats, q, 5) == cats[static_cast<size_t>(q)])
            correct[static_cast<size_t>(cats[static_cast<size_t>(q)])]++;
    }
    double mean = 0.0;
    for (int c = 0; c < kCategoryCount; ++c) {
        const double pc = 100.0 * correct[static_cast<size_t>(c)] / total[static_cast<size_t>(c)];
        CHECK(r.per_category[static_cast<size_t>(c)] == pc);
        mean += pc;
    }
    CHECK(r.average == doctest::Approx(mean / 5).epsilon(1e-12));
}

TEST_CASE("eval_knn: empty category degrades the report and the average") {
    Rng rng(33);
    std::vector<std::vector<float>> vecs;
    std::vector<Category> cats;
    for (int c = 0; c < 4; ++c) {  // no OTHER entries
        for (int i = 0; i < 5; ++i) {
            std::vector<float> v(3, static_cast<float>(5.0 * c));
            v[1] += static_cast<float>(rng.uniform_real(-0.1, 0.1));
            vecs.push_back(v);
            cats.push_back(static_cast<Category>(c));
        }
    }
    EmbeddingIndex idx = stub_index(vecs, cats);
    EvalReport r = eval_knn(idx, 3);
    CHECK(r.degraded);
    CHECK(r.ways == 4);
    CHECK_FALSE(r.present[static_cast<size_t>(Category::OTHER)]);
    CHECK(r.average == 100.0);  // mean over the four present categories
    CHECK(r.to_json().find("\"Other\": null") != std::string::npos);
}

TEST_CASE("eval_knn: k must be smaller than the index") {
    Rng rng(34);
    std::vector<std::vector<float>> vecs = {random_vec(rng, 3), random_vec(rng, 3), random_vec(rng, 3)};
    std::vector<Category> cats = {Category::PET, Category::PP, Category::PS};
    EmbeddingIndex idx = stub_index(vecs, cats);
    CHECK_THROWS_AS(eval_knn(idx, 3), std::invalid_argument);
}

TEST_CASE("report: table rendering mirrors the column layout") {
    EvalReport r;
    r.protocol = "knn";
    r.embedding = "triplet";
    r.k = 3;
    r.dim = 128;
    r.per_category = {99.68, 100.0, 99.30, 100.0, 100.0};
    r.present = {true, true, true, true, true};
    r.average = 99.79;
    r.episodes_or_queries = 4000;
    const std::string table = r.to_table();
    CHECK(table.find("PET") != std::string::npos);
    CHECK(table.find("PE-HD") != std::string::npos);
    CHECK(table.find("Average") != std::string::npos);
    CHECK(table.find("K=3") != std::string::npos);
    CHECK(table.find("99.79") != std::string::npos);
}
