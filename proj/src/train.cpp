#include "train.hpp"

#include <malloc.h>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "errors.hpp"
#include "kernels.hpp"

namespace oneshot {

void tune_allocator_once() {
    // Tapes allocate tens of MB per sample; glibc would serve those as fresh
    // mmaps and hand the pages back on free, paying page faults and TLB
    // shootdowns every batch. Keep them in the arenas instead. Worker threads
    // carry large cache working sets, so ask OpenMP to pin them (only
    // effective when set before the runtime spins up; user settings win).
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        setenv("OMP_PROC_BIND", "close", 0);
        setenv("OMP_PLACES", "cores", 0);
    });
}

void TrainConfig::validate() const {
    if (resolved_epochs() < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (instances_per_epoch <= 0) throw std::invalid_argument("train: instances_per_epoch must be positive");
    if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
    if (!(lr > 0.0f)) throw std::invalid_argument("train: learning rate must be > 0");
    if (momentum < 0.0f) throw std::invalid_argument("train: momentum must be >= 0");
    if (!(margin > 0.0f)) throw std::invalid_argument("train: margin must be > 0");
}

int resolve_threads() {
    if (const char* env = std::getenv("ONESHOT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
}

namespace {

Tensor stack_images(const Dataset& ds, std::initializer_list<int> idx) {
    const Tensor& first = ds.images[static_cast<size_t>(*idx.begin())].pixels;
    const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor out = Tensor::uninit({static_cast<int>(idx.size()), c, h, w});
    const size_t stride = first.size();
    size_t b = 0;
    for (int i : idx) {
        const Tensor& px = ds.images[static_cast<size_t>(i)].pixels;
        std::copy_n(px.data(), stride, out.data() + b * stride);
        ++b;
    }
    return out;
}

Tensor stack_pair(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::uninit({2, a.dim(0), a.dim(1), a.dim(2)});
    std::copy_n(a.data(), a.size(), out.data());
    std::copy_n(b.data(), b.size(), out.data() + a.size());
    return out;
}

Tensor stack_triple(const Tensor& a, const Tensor& p, const Tensor& n) {
    Tensor out = Tensor::uninit({3, a.dim(0), a.dim(1), a.dim(2)});
    std::copy_n(a.data(), a.size(), out.data());
    std::copy_n(p.data(), p.size(), out.data() + a.size());
    std::copy_n(n.data(), n.size(), out.data() + 2 * a.size());
    return out;
}

Tape::Val siamese_loss_from_stack(Tape& tape, Backbone& net, Tensor stacked, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("siamese loss: label must be 0 or 1");
    Tape::Val emb = embed_on_tape(tape, net, tape.input(std::move(stacked)));
    Tape::Val d2 = tape.l2_distance_sq(tape.row(emb, 0), tape.row(emb, 1));
    Tape::Val d = tape.sqrt_scalar(d2);
    Tape::Val z = tape.add(tape.mul(d, tape.param(*net.params.find("score.weight"))),
                           tape.param(*net.params.find("score.bias")));
    Tape::Val score = tape.sigmoid(z);
    return tape.bce_loss(score, static_cast<float>(label));
}

Tape::Val triplet_loss_from_stack(Tape& tape, Backbone& net, Tensor stacked, float margin) {
    Tape::Val emb = embed_on_tape(tape, net, tape.input(std::move(stacked)));
    Tape::Val head = triplet_head_on_tape(tape, net, emb);
    Tape::Val fa = tape.l2_normalize(tape.row(head, 0));
    Tape::Val fp = tape.l2_normalize(tape.row(head, 1));
    Tape::Val fn = tape.l2_normalize(tape.row(head, 2));
    Tape::Val diff = tape.sub(tape.l2_distance_sq(fa, fp), tape.l2_distance_sq(fa, fn));
    return tape.relu(tape.add_const(diff, margin));
}

}  // namespace

Tape::Val siamese_score_on_tape(Tape& tape, Backbone& net, const Tensor& a, const Tensor& b) {
    Tape::Val emb = embed_on_tape(tape, net, tape.input(stack_pair(a, b)));
    Tape::Val d2 = tape.l2_distance_sq(tape.row(emb, 0), tape.row(emb, 1));
    Tape::Val d = tape.sqrt_scalar(d2);
    Tape::Val z = tape.add(tape.mul(d, tape.param(*net.params.find("score.weight"))),
                           tape.param(*net.params.find("score.bias")));
    return tape.sigmoid(z);
}

Tape::Val siamese_pair_loss_on_tape(Tape& tape, Backbone& net, const Tensor& a, const Tensor& b, int label) {
    return siamese_loss_from_stack(tape, net, stack_pair(a, b), label);
}

Tape::Val triplet_sample_loss_on_tape(Tape& tape, Backbone& net, const Tensor& anchor, const Tensor& positive,
                                      const Tensor& negative, float margin) {
    return triplet_loss_from_stack(tape, net, stack_triple(anchor, positive, negative), margin);
}

float siamese_score(const Backbone& net, const Tensor& a, const Tensor& b) {
    const Tensor ea = embed(net, a);
    const Tensor eb = embed(net, b);
    const float d = std::sqrt(kernels::l2_distance_sq(ea, eb));
    const float w = net.params.find("score.weight")->value[0];
    const float c = net.params.find("score.bias")->value[0];
    return 1.0f / (1.0f + std::exp(-(w * d + c)));
}

float siamese_loss(float score, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("siamese_loss: label must be 0 or 1");
    constexpr double eps = 1e-7;
    const double p = std::min(std::max(static_cast<double>(score), eps), 1.0 - eps);
    return static_cast<float>(-(label * std::log(p) + (1.0 - label) * std::log(1.0 - p)));
}

float triplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn, float margin) {
    if (!fa.same_shape(fp) || !fa.same_shape(fn))
        throw std::invalid_argument("triplet_loss: dimension mismatch " + fa.shape_str() + " / " + fp.shape_str() +
                                    " / " + fn.shape_str());
    const double d_ap = kernels::l2_distance_sq(fa, fp);
    const double d_an = kernels::l2_distance_sq(fa, fn);
    return static_cast<float>(std::max(0.0, d_ap - d_an + static_cast<double>(margin)));
}

std::pair<Backbone, TrainHistory> train(const Dataset& dataset, const TrainConfig& config,
                                        const ProgressFn& progress) {
    config.validate();
    tune_allocator_once();

    BackboneConfig bc = config.backbone;
    if (config.mode == TrainMode::triplet) bc.include_triplet_head = true;
    Backbone net = build_backbone(bc, config.seed);

    TrainHistory history;
    const int epochs = config.resolved_epochs();
    Rng rng(config.seed);

    const int nthreads = resolve_threads();
    std::vector<std::unique_ptr<BufferedGradSink>> sinks;
    for (int t = 0; t < nthreads; ++t) sinks.push_back(std::make_unique<BufferedGradSink>(net.params));

    struct Drawn {
        int a, b, c;  // pair uses a,b; triplet uses all three
        int label;
    };
    std::vector<Drawn> batch(static_cast<size_t>(config.batch_size));
    std::vector<double> losses(static_cast<size_t>(config.batch_size));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double epoch_loss = 0.0;
        int remaining = config.instances_per_epoch;
        int batch_index = 0;

        while (remaining > 0) {
            const int bsz = std::min(config.batch_size, remaining);
            for (int s = 0; s < bsz; ++s) {
                if (config.mode == TrainMode::siamese) {
                    const PairSample ps = sample_pair(dataset, rng);
                    batch[static_cast<size_t>(s)] = {ps.first, ps.second, -1, ps.label};
                } else {
                    const TripletSample ts = sample_triplet(dataset, rng);
                    batch[static_cast<size_t>(s)] = {ts.anchor, ts.positive, ts.negative, -1};
                }
            }

            const float seed_scale = 1.0f / static_cast<float>(bsz);
#pragma omp parallel num_threads(nthreads)
            {
                const int tid = omp_get_thread_num();
#pragma omp for schedule(static)
                for (int s = 0; s < bsz; ++s) {
                    const Drawn& dr = batch[static_cast<size_t>(s)];
                    Tape tape;
                    Tape::Val loss;
                    if (config.mode == TrainMode::siamese) {
                        loss = siamese_loss_from_stack(
                            tape, net, stack_images(dataset, {dr.a, dr.b}), dr.label);
                    } else {
                        loss = triplet_loss_from_stack(
                            tape, net, stack_images(dataset, {dr.a, dr.b, dr.c}), config.margin);
                    }
                    losses[static_cast<size_t>(s)] = tape.value(loss)[0];
                    tape.backward(loss, *sinks[static_cast<size_t>(tid)], seed_scale);
                }
                sinks[static_cast<size_t>(tid)]->flush();
            }

            double batch_loss = 0.0;
            for (int s = 0; s < bsz; ++s) batch_loss += losses[static_cast<size_t>(s)];
            if (!std::isfinite(batch_loss))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            epoch_loss += batch_loss;

            // slots reduce independently; within a slot, sinks add in fixed
            // thread order, so the result is bit-stable for any thread count
            const int64_t n_slots = static_cast<int64_t>(net.params.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(nthreads)
            for (int64_t slot = 0; slot < n_slots; ++slot) {
                Tensor& grad = net.params.at(static_cast<size_t>(slot)).grad;
                for (auto& sink : sinks) {
                    if (Tensor* buf = sink->buffer_at(static_cast<size_t>(slot))) {
                        float* dst = grad.data();
                        const float* src = buf->data();
                        for (size_t i = 0; i < buf->size(); ++i) dst[i] += src[i];
                        buf->zero();
                    }
                }
            }
            sgd_step(net.params, config.lr, config.momentum);

            remaining -= bsz;
            ++batch_index;
        }

        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double mean_loss = epoch_loss / config.instances_per_epoch;
        history.epochs.push_back({mean_loss, seconds});
        if (progress) progress(epoch, mean_loss, seconds);
    }

    history.param_checksum = params_checksum(net.params);
    return {std::move(net), std::move(history)};
}

uint64_t params_checksum(const ParamSet& params) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : params) {
        mix(p->name.data(), p->name.size());
        mix(p->value.data(), p->value.size() * sizeof(float));
    }
    return h;
}

}  // namespace oneshot
