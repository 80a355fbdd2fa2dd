#include "backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels.hpp"
#include "rng.hpp"

namespace oneshot {

StagePlan plan_stages(const BackboneConfig& config) {
    if (config.input_size <= 0 || config.input_channels <= 0)
        throw std::invalid_argument("backbone: input size and channels must be positive");
    if (config.convs.empty()) throw std::invalid_argument("backbone: at least one conv stage required");
    if (config.embedding_dim <= 0 || config.triplet_head_dim <= 0)
        throw std::invalid_argument("backbone: embedding dimensions must be positive");

    StagePlan plan;
    int s = config.input_size;
    const int n = static_cast<int>(config.convs.size());
    for (int i = 0; i < n; ++i) {
        const ConvSpec& c = config.convs[static_cast<size_t>(i)];
        if (c.out_channels <= 0 || c.kernel_size <= 0)
            throw std::invalid_argument("backbone: conv" + std::to_string(i + 1) + " spec must be positive");
        if (s < c.kernel_size)
            throw std::invalid_argument("backbone: conv" + std::to_string(i + 1) + " kernel " +
                                        std::to_string(c.kernel_size) + " exceeds spatial size " + std::to_string(s));
        s = s - c.kernel_size + 1;
        plan.spatial.push_back(s);
        if (i + 1 < n) {
            if (s % 2 != 0)
                throw std::invalid_argument("backbone: pool after conv" + std::to_string(i + 1) +
                                            " needs an even spatial size, got " + std::to_string(s));
            s /= 2;
            plan.spatial.push_back(s);
        }
    }
    plan.flatten_size = config.convs.back().out_channels * s * s;
    return plan;
}

Backbone build_backbone(const BackboneConfig& config, uint64_t seed) {
    const StagePlan plan = plan_stages(config);
    Backbone net;
    net.config = config;
    Rng rng(seed);

    auto normal_tensor = [&rng](std::vector<int> shape, double stddev) {
        Tensor t(std::move(shape));
        for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal(0.0, stddev));
        return t;
    };

    // fan-in-scaled weights: with thin-tailed layer scales the deep stack
    // washes out per-image signal and the margin loss starts with vanishing
    // gradients; sqrt(2/fan_in) keeps activation variance alive through the
    // relu stages
    auto fan_std = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

    int in_c = config.input_channels;
    for (size_t i = 0; i < config.convs.size(); ++i) {
        const ConvSpec& c = config.convs[i];
        const std::string stem = "conv" + std::to_string(i + 1);
        net.params.add(stem + ".weight", normal_tensor({c.out_channels, in_c, c.kernel_size, c.kernel_size},
                                                       fan_std(in_c * c.kernel_size * c.kernel_size)));
        Tensor bias({c.out_channels});
        bias.fill(0.5f);
        net.params.add(stem + ".bias", std::move(bias));
        in_c = c.out_channels;
    }

    net.params.add("fc.weight", normal_tensor({config.embedding_dim, plan.flatten_size}, fan_std(plan.flatten_size)));
    net.params.add("fc.bias", Tensor({config.embedding_dim}));

    if (config.include_triplet_head) {
        net.params.add("head.weight",
                       normal_tensor({config.triplet_head_dim, config.embedding_dim}, fan_std(config.embedding_dim)));
        net.params.add("head.bias", Tensor({config.triplet_head_dim}));
    }

    net.params.add("score.weight", Tensor({1}, {1.0f}));
    net.params.add("score.bias", Tensor({1}, {0.0f}));
    return net;
}

namespace {

void check_image_shape(const BackboneConfig& config, const Tensor& images) {
    const bool batched = images.ndim() == 4;
    if (images.ndim() != 3 && !batched)
        throw std::invalid_argument("embed: image must be [C,S,S] or [B,C,S,S], got " + images.shape_str());
    const int off = batched ? 1 : 0;
    if (images.dim(off) != config.input_channels || images.dim(off + 1) != config.input_size ||
        images.dim(off + 2) != config.input_size)
        throw std::invalid_argument("embed: expected image " + std::to_string(config.input_channels) + "x" +
                                    std::to_string(config.input_size) + "x" + std::to_string(config.input_size) +
                                    ", got " + images.shape_str());
}

}  // namespace

Tape::Val embed_on_tape(Tape& tape, Backbone& net, Tape::Val images) {
    check_image_shape(net.config, tape.value(images));
    const int n = static_cast<int>(net.config.convs.size());
    Tape::Val x = images;
    for (int i = 0; i < n; ++i) {
        const std::string stem = "conv" + std::to_string(i + 1);
        Tape::Val w = tape.param(*net.params.find(stem + ".weight"));
        Tape::Val b = tape.param(*net.params.find(stem + ".bias"));
        x = tape.relu(tape.conv2d(x, w, b));
        if (i + 1 < n) x = tape.maxpool2(x);
    }
    x = tape.flatten(x);
    x = tape.linear(x, tape.param(*net.params.find("fc.weight")), tape.param(*net.params.find("fc.bias")));
    return tape.sigmoid(x);
}

Tape::Val triplet_head_on_tape(Tape& tape, Backbone& net, Tape::Val embedding) {
    Parameter* w = net.params.find("head.weight");
    Parameter* b = net.params.find("head.bias");
    if (!w || !b) throw std::invalid_argument("triplet head requested but not present in this backbone");
    return tape.linear(embedding, tape.param(*w), tape.param(*b));
}

Tensor embed_batch(const Backbone& net, const Tensor& images, bool use_triplet_head) {
    check_image_shape(net.config, images);
    auto& params = const_cast<ParamSet&>(net.params);  // read-only access below
    const int n = static_cast<int>(net.config.convs.size());
    Tensor x = images;
    for (int i = 0; i < n; ++i) {
        const std::string stem = "conv" + std::to_string(i + 1);
        x = kernels::conv2d_forward(x, params.find(stem + ".weight")->value, params.find(stem + ".bias")->value,
                                    nullptr);
        x = kernels::relu_forward(x);
        if (i + 1 < n) x = kernels::maxpool2_forward(x, nullptr);
    }
    const bool batched = x.ndim() == 4;
    x = batched ? x.reshaped({x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)}) : x.reshaped({static_cast<int>(x.size())});
    x = kernels::linear_forward(x, params.find("fc.weight")->value, params.find("fc.bias")->value);
    x = kernels::sigmoid_forward(x);

    if (!use_triplet_head) return x;

    Parameter* hw = params.find("head.weight");
    Parameter* hb = params.find("head.bias");
    if (!hw || !hb) throw std::invalid_argument("embed_triplet: backbone has no triplet head");
    x = kernels::linear_forward(x, hw->value, hb->value);
    if (x.ndim() == 1) {
        Tensor out;
        kernels::l2_normalize_forward(x, out);
        return out;
    }
    const int batch = x.dim(0), dim = x.dim(1);
    Tensor out = Tensor::uninit({batch, dim});
    Tensor rowbuf = Tensor::uninit({dim}), normed;
    for (int r = 0; r < batch; ++r) {
        std::copy_n(x.data() + static_cast<size_t>(r) * dim, dim, rowbuf.data());
        kernels::l2_normalize_forward(rowbuf, normed);
        std::copy_n(normed.data(), dim, out.data() + static_cast<size_t>(r) * dim);
    }
    return out;
}

Tensor embed(const Backbone& net, const Tensor& image) {
    if (image.ndim() != 3)
        throw std::invalid_argument("embed: image must be [C,S,S], got " + image.shape_str());
    return embed_batch(net, image, false);
}

Tensor embed_triplet(const Backbone& net, const Tensor& image) {
    if (image.ndim() != 3)
        throw std::invalid_argument("embed_triplet: image must be [C,S,S], got " + image.shape_str());
    return embed_batch(net, image, true);
}

}  // namespace oneshot
