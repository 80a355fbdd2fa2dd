#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace oneshot {

/// Trainable tensor with its gradient and momentum buffers.
/// value, grad and velocity always share one shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor velocity;
    size_t slot = 0;  // position in the owning ParamSet

    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), velocity(value.shape()) {}
};

/// Ordered, uniquely-named parameter collection. Order is creation order and
/// fixes the update/serialization order, which keeps runs reproducible.
class ParamSet {
public:
    Parameter& add(std::string name, Tensor init);
    Parameter* find(std::string_view name);
    const Parameter* find(std::string_view name) const;

    size_t size() const { return params_.size(); }
    Parameter& at(size_t i) { return *params_[i]; }
    const Parameter& at(size_t i) const { return *params_[i]; }

    void zero_grads();
    size_t total_values() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

/// v <- momentum * v + grad;  value <- value - lr * v;  grad <- 0.
void sgd_step(ParamSet& params, float lr, float momentum);

/// Destination for parameter gradients produced by a backward sweep.
class GradSink {
public:
    virtual ~GradSink() = default;
    virtual void add(Parameter& p, const Tensor& g) = 0;
    /// Rank-update fast path for linear-layer weights: conceptually
    /// grad(p) += dout^T * input, with dout [B,M] or [M] and input [B,N] or [N].
    virtual void add_outer(Parameter& p, const Tensor& dout, const Tensor& input) = 0;
};

/// Accumulates straight into Parameter::grad.
class DirectGradSink final : public GradSink {
public:
    void add(Parameter& p, const Tensor& g) override;
    void add_outer(Parameter& p, const Tensor& dout, const Tensor& input) override;
};

/// Thread-private accumulation buffers. Outer products are staged and run as
/// one batched matrix product per parameter at flush time; the final
/// reduce_into_grads happens in ParamSet order so multi-threaded training
/// reduces in a fixed order.
class BufferedGradSink final : public GradSink {
public:
    explicit BufferedGradSink(ParamSet& params);

    void add(Parameter& p, const Tensor& g) override;
    void add_outer(Parameter& p, const Tensor& dout, const Tensor& input) override;

    /// Materializes staged outer products into the buffers.
    void flush();
    /// param.grad += buffer for every touched parameter, then clears.
    void reduce_into_grads();
    /// Buffer for one slot (nullptr when untouched); flush() first. Lets the
    /// trainer reduce slots in parallel while keeping per-slot sink order.
    Tensor* buffer_at(size_t slot) {
        return buffers_[slot].empty() ? nullptr : &buffers_[slot];
    }

private:
    struct Staged {
        std::vector<float> dout_rows;   // rows of M
        std::vector<float> input_rows;  // rows of N
        int m = 0, n = 0, rows = 0;
    };
    ParamSet& params_;
    std::vector<Tensor> buffers_;  // indexed by Parameter::slot, empty until touched
    std::vector<Staged> staged_;

    Tensor& buffer_for(Parameter& p);
};

/// Reverse-mode recorder. Operations append nodes in execution order;
/// backward() replays them in exact reverse order, accumulating gradients
/// additively so values feeding several consumers receive summed adjoints.
class Tape {
public:
    struct Val {
        int i = -1;
        bool valid() const { return i >= 0; }
    };

    // -- leaves ------------------------------------------------------------
    Val input(Tensor v);        // constant, no gradient tracking
    Val param(Parameter& p);    // memoized: one leaf per Parameter per tape

    // -- differentiable operations ------------------------------------------
    Val conv2d(Val input, Val kernels, Val bias);
    Val maxpool2(Val input);
    Val linear(Val input, Val weights, Val bias);
    Val relu(Val x);
    Val sigmoid(Val x);
    Val flatten(Val x);              // [C,H,W] -> [N], [B,C,H,W] -> [B,N]
    Val row(Val x, int r);           // [B,N] -> [N]
    Val l2_distance_sq(Val a, Val b);
    Val sqrt_scalar(Val x);
    Val l2_normalize(Val x);
    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    Val add_const(Val a, float c);
    Val scale(Val a, float c);
    Val bce_loss(Val prediction, float target);
    Val weighted_sum(Val x, Tensor weights);  // sum(w .* x) -> scalar

    // -- access --------------------------------------------------------------
    const Tensor& value(Val v) const { return val(v.i); }
    /// Gradient of the last backward pass; zeros if none reached the node.
    const Tensor& grad(Val v);
    size_t node_count() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Parameter gradients go to the sink;
    /// seed scales every gradient (used for batch averaging).
    void backward(Val loss, GradSink& sink, float seed = 1.0f);
    /// Convenience: accumulate into Parameter::grad directly.
    void backward(Val loss);

private:
    struct Node {
        Tensor value;
        const Tensor* ext = nullptr;  // parameter leaves alias instead of copying
        Tensor grad;                  // empty until first accumulation
        bool needs_grad = false;
        Parameter* bound = nullptr;  // leaf binding for parameters
        std::function<void(Tape&, int, GradSink&)> back;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, int>> param_leaves_;  // insertion-ordered
    std::unordered_map<const Parameter*, int> param_index_;
    bool swept_ = false;

    int push(Tensor value, bool needs_grad, std::function<void(Tape&, int, GradSink&)> back);
    bool needs(Val v) const { return nodes_[static_cast<size_t>(v.i)].needs_grad; }
    bool grad_ready(int i) const { return !nodes_[static_cast<size_t>(i)].grad.empty(); }
    Tensor& grad_buf(int i);
    const Tensor& val(int i) const {
        const Node& n = nodes_[static_cast<size_t>(i)];
        return n.ext ? *n.ext : n.value;
    }
    void check(Val v) const;
};

}  // namespace oneshot
