#include "eval.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kernels.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace oneshot {

namespace {

constexpr int kEmbedChunk = 16;

double squared_distance(const float* a, const float* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

}  // namespace

EmbeddingIndex build_index(const Backbone& net, const Dataset& dataset, TrainMode head) {
    if (head == TrainMode::triplet && !net.config.include_triplet_head)
        throw std::invalid_argument("build_index: triplet head requested but the model has none");

    tune_allocator_once();
    EmbeddingIndex index;
    index.dim = head == TrainMode::triplet ? net.config.triplet_head_dim : net.config.embedding_dim;
    index.entries.resize(dataset.size());

    const int n = static_cast<int>(dataset.size());
    const int chunks = (n + kEmbedChunk - 1) / kEmbedChunk;
    const int nthreads = resolve_threads();

#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int chunk = 0; chunk < chunks; ++chunk) {
        const int begin = chunk * kEmbedChunk;
        const int count = std::min(kEmbedChunk, n - begin);
        const Tensor& first = dataset.images[static_cast<size_t>(begin)].pixels;
        Tensor stacked = Tensor::uninit({count, first.dim(0), first.dim(1), first.dim(2)});
        const size_t stride = first.size();
        for (int i = 0; i < count; ++i)
            std::copy_n(dataset.images[static_cast<size_t>(begin + i)].pixels.data(), stride,
                        stacked.data() + static_cast<size_t>(i) * stride);
        const Tensor emb = embed_batch(net, stacked, head == TrainMode::triplet);
        for (int i = 0; i < count; ++i) {
            const LabeledImage& img = dataset.images[static_cast<size_t>(begin + i)];
            EmbeddingEntry& e = index.entries[static_cast<size_t>(begin + i)];
            e.id = img.id;
            e.category = img.category;
            e.vec.assign(emb.data() + static_cast<size_t>(i) * index.dim,
                         emb.data() + static_cast<size_t>(i + 1) * index.dim);
        }
    }
    return index;
}

Category nearest_support(const EmbeddingIndex& index, int query, const std::vector<int>& support) {
    if (support.empty()) throw std::invalid_argument("nearest_support: empty support set");
    std::array<int, kCategoryCount> seen{};
    for (int s : support) seen[static_cast<size_t>(index.entries[static_cast<size_t>(s)].category)]++;
    for (int c : seen)
        if (c > 1) throw std::invalid_argument("nearest_support: support contains a duplicate category");

    // visit in resin-numeral order so exact ties keep the lowest numeral
    std::vector<int> ordered = support;
    std::sort(ordered.begin(), ordered.end(), [&](int a, int b) {
        return index.entries[static_cast<size_t>(a)].category < index.entries[static_cast<size_t>(b)].category;
    });
    const float* q = index.entries[static_cast<size_t>(query)].vec.data();
    Category best = index.entries[static_cast<size_t>(ordered.front())].category;
    double best_d = 0.0;
    bool first = true;
    for (int s : ordered) {
        const double d = squared_distance(q, index.entries[static_cast<size_t>(s)].vec.data(), index.dim);
        if (first || d < best_d) {
            best = index.entries[static_cast<size_t>(s)].category;
            best_d = d;
            first = false;
        }
    }
    return best;
}

Category one_shot_episode(const Backbone& net, TrainMode mode, const LabeledImage& sample,
                          const std::vector<const LabeledImage*>& support) {
    std::array<int, kCategoryCount> seen{};
    for (const LabeledImage* s : support) {
        if (!s) throw std::invalid_argument("one_shot_episode: null support image");
        seen[static_cast<size_t>(s->category)]++;
    }
    for (int c : seen)
        if (c != 1)
            throw std::invalid_argument("one_shot_episode: support must cover each category exactly once");

    const bool triplet = mode == TrainMode::triplet;
    EmbeddingIndex index;
    index.dim = triplet ? net.config.triplet_head_dim : net.config.embedding_dim;
    auto push = [&](const LabeledImage& img) {
        const Tensor e = triplet ? embed_triplet(net, img.pixels) : embed(net, img.pixels);
        index.entries.push_back({img.id, img.category, std::vector<float>(e.data(), e.data() + e.size())});
    };
    push(sample);
    std::vector<int> support_pos;
    for (const LabeledImage* s : support) {
        push(*s);
        support_pos.push_back(static_cast<int>(index.entries.size()) - 1);
    }
    return nearest_support(index, 0, support_pos);
}

EvalReport eval_one_shot(const Backbone& net, TrainMode mode, const Dataset& dataset, int episodes, uint64_t seed) {
    if (episodes <= 0) throw std::invalid_argument("eval_one_shot: episodes must be positive");
    if (dataset.size() == 0) throw std::invalid_argument("eval_one_shot: empty dataset");

    EvalReport report;
    report.protocol = "oneshot";
    report.embedding = mode == TrainMode::triplet ? "triplet" : "siamese";
    report.episodes_or_queries = episodes;
    report.seed = seed;

    const EmbeddingIndex index = build_index(net, dataset, mode);
    report.dim = index.dim;

    std::vector<Category> present_cats;
    for (Category c : kAllCategories) {
        const bool have = !dataset.of(c).empty();
        report.present[static_cast<size_t>(c)] = have;
        if (have)
            present_cats.push_back(c);
    }
    report.ways = static_cast<int>(present_cats.size());
    report.degraded = report.ways < kCategoryCount;
    if (report.ways < 2) throw std::invalid_argument("eval_one_shot: need at least two categories, got " + dataset.stats());

    Rng rng(seed);
    std::array<int, kCategoryCount> per_cat_total{};
    std::array<int, kCategoryCount> per_cat_correct{};
    int correct = 0;

    std::vector<int> support;
    for (int ep = 0; ep < episodes; ++ep) {
        const int query = static_cast<int>(rng.uniform(dataset.size()));
        const Category qc = dataset.images[static_cast<size_t>(query)].category;

        // one support per present category, excluding the query when possible
        support.clear();
        for (Category c : present_cats) {
            const auto& pool = dataset.of(c);
            if (c == qc && pool.size() > 1) {
                size_t qpos = 0;
                for (size_t i = 0; i < pool.size(); ++i)
                    if (pool[i] == query) qpos = i;
                size_t j = static_cast<size_t>(rng.uniform(pool.size() - 1));
                if (j >= qpos) ++j;
                support.push_back(pool[j]);
            } else {
                support.push_back(pool[static_cast<size_t>(rng.uniform(pool.size()))]);
            }
        }
        const Category predicted = nearest_support(index, query, support);

        per_cat_total[static_cast<size_t>(qc)]++;
        if (predicted == qc) {
            ++correct;
            per_cat_correct[static_cast<size_t>(qc)]++;
        }
    }

    for (Category c : kAllCategories) {
        const size_t i = static_cast<size_t>(c);
        report.per_category[i] = per_cat_total[i] > 0 ? 100.0 * per_cat_correct[i] / per_cat_total[i] : 0.0;
    }
    report.average = 100.0 * correct / episodes;
    return report;
}

Category knn_classify(const EmbeddingIndex& index, int query, int k) {
    const int n = static_cast<int>(index.size());
    if (k <= 0) throw std::invalid_argument("knn_classify: k must be positive");
    if (k >= n) throw std::invalid_argument("knn_classify: k=" + std::to_string(k) + " must be smaller than index size " +
                                            std::to_string(n));
    if (query < 0 || query >= n) throw std::invalid_argument("knn_classify: query position out of range");

    const float* q = index.entries[static_cast<size_t>(query)].vec.data();
    std::vector<std::pair<double, int>> dists;
    dists.reserve(static_cast<size_t>(n) - 1);
    for (int i = 0; i < n; ++i) {
        if (i == query) continue;
        dists.emplace_back(squared_distance(q, index.entries[static_cast<size_t>(i)].vec.data(), index.dim), i);
    }
    // lexicographic order realizes the entry-order tie break
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());

    std::array<int, kCategoryCount> votes{};
    std::array<double, kCategoryCount> dist_sum{};
    for (int i = 0; i < k; ++i) {
        const size_t c = static_cast<size_t>(index.entries[static_cast<size_t>(dists[static_cast<size_t>(i)].second)].category);
        votes[c]++;
        dist_sum[c] += std::sqrt(dists[static_cast<size_t>(i)].first);
    }

    int best_votes = 0;
    for (int v : votes) best_votes = std::max(best_votes, v);

    // among tied categories: smallest mean distance, then lowest numeral
    Category winner = Category::PET;
    double winner_mean = 0.0;
    bool first = true;
    for (Category c : kAllCategories) {
        const size_t i = static_cast<size_t>(c);
        if (votes[i] != best_votes) continue;
        const double mean = dist_sum[i] / votes[i];
        if (first || mean < winner_mean) {
            winner = c;
            winner_mean = mean;
            first = false;
        }
    }
    return winner;
}

EvalReport eval_knn(const EmbeddingIndex& index, int k) {
    const int n = static_cast<int>(index.size());
    if (k >= n) throw std::invalid_argument("eval_knn: k=" + std::to_string(k) + " must be smaller than index size " +
                                            std::to_string(n));

    EvalReport report;
    report.protocol = "knn";
    report.k = k;
    report.dim = index.dim;
    report.episodes_or_queries = n;

    std::array<int, kCategoryCount> total{};
    std::array<int, kCategoryCount> correct{};
    for (const EmbeddingEntry& e : index.entries) total[static_cast<size_t>(e.category)]++;

    const int nthreads = resolve_threads();
    std::vector<std::array<int, kCategoryCount>> local(static_cast<size_t>(nthreads));
#pragma omp parallel num_threads(nthreads)
    {
        const int tid = omp_get_thread_num();
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) {
            if (knn_classify(index, i, k) == index.entries[static_cast<size_t>(i)].category)
                local[static_cast<size_t>(tid)][static_cast<size_t>(index.entries[static_cast<size_t>(i)].category)]++;
        }
    }
    for (const auto& arr : local)
        for (size_t c = 0; c < kCategoryCount; ++c) correct[c] += arr[c];

    double sum = 0.0;
    int present = 0;
    for (Category c : kAllCategories) {
        const size_t i = static_cast<size_t>(c);
        report.present[i] = total[i] > 0;
        if (total[i] > 0) {
            report.per_category[i] = 100.0 * correct[i] / total[i];
            sum += report.per_category[i];
            ++present;
        }
    }
    report.ways = present;
    report.degraded = present < kCategoryCount;
    report.average = present > 0 ? sum / present : 0.0;
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["protocol"] = protocol;
    if (k > 0) j["k"] = k;
    j["embedding"] = embedding;
    j["dim"] = dim;
    nlohmann::ordered_json cats;
    for (Category c : kAllCategories) {
        const size_t i = static_cast<size_t>(c);
        if (present[i])
            cats[category_name(c)] = per_category[i];
        else
            cats[category_name(c)] = nullptr;
    }
    j["per_category_accuracy"] = cats;
    j["average"] = average;
    j["episodes_or_queries"] = episodes_or_queries;
    j["seed"] = seed;
    j["ways"] = ways;
    j["degraded"] = degraded;
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    char buf[64];
    os << "Method      ";
    if (protocol == "knn") os << " KNN ";
    for (Category c : kAllCategories) {
        std::snprintf(buf, sizeof(buf), " %-8s", category_name(c));
        os << buf;
    }
    os << " Average\n";
    std::snprintf(buf, sizeof(buf), "%-12s", embedding.c_str());
    os << buf;
    if (protocol == "knn") {
        std::snprintf(buf, sizeof(buf), " K=%-2d", k);
        os << buf;
    }
    for (Category c : kAllCategories) {
        const size_t i = static_cast<size_t>(c);
        if (present[i])
            std::snprintf(buf, sizeof(buf), " %-8.2f", per_category[i]);
        else
            std::snprintf(buf, sizeof(buf), " %-8s", "-");
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), " %.2f", average);
    os << buf << "\n";
    return os.str();
}

}  // namespace oneshot
