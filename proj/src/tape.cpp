#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "blas.hpp"
#include "kernels.hpp"

namespace oneshot {

// ---------------------------------------------------------------------------
// ParamSet / SGD
// ---------------------------------------------------------------------------

Parameter& ParamSet::add(std::string name, Tensor init) {
    for (const auto& p : params_)
        if (p->name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
    params_.back()->slot = params_.size() - 1;
    return *params_.back();
}

Parameter* ParamSet::find(std::string_view name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Parameter* ParamSet::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParamSet::zero_grads() {
    for (auto& p : params_) p->grad.zero();
}

size_t ParamSet::total_values() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void sgd_step(ParamSet& params, float lr, float momentum) {
    if (!(lr > 0.0f)) throw std::invalid_argument("sgd_step: learning rate must be > 0");
    if (momentum < 0.0f) throw std::invalid_argument("sgd_step: momentum must be >= 0");
    for (auto& p : params) {
        float* v = p->velocity.data();
        float* g = p->grad.data();
        float* x = p->value.data();
        const int64_t n = static_cast<int64_t>(p->value.size());
        // elementwise, so the parallel split cannot change any result
#pragma omp parallel for schedule(static) if (n > (1 << 16))
        for (int64_t i = 0; i < n; ++i) {
            v[i] = momentum * v[i] + g[i];
            x[i] -= lr * v[i];
            g[i] = 0.0f;
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient sinks
// ---------------------------------------------------------------------------

void DirectGradSink::add(Parameter& p, const Tensor& g) {
    if (!g.same_shape(p.value))
        throw std::invalid_argument("gradient shape " + g.shape_str() + " mismatch for " + p.name);
    float* dst = p.grad.data();
    const float* src = g.data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void DirectGradSink::add_outer(Parameter& p, const Tensor& dout, const Tensor& input) {
    kernels::linear_backward_weights(dout, input, p.grad);
}

BufferedGradSink::BufferedGradSink(ParamSet& params)
    : params_(params), buffers_(params.size()), staged_(params.size()) {}

Tensor& BufferedGradSink::buffer_for(Parameter& p) {
    Tensor& buf = buffers_[p.slot];
    if (buf.empty()) buf = Tensor(p.value.shape());
    return buf;
}

void BufferedGradSink::add(Parameter& p, const Tensor& g) {
    Tensor& buf = buffer_for(p);
    float* dst = buf.data();
    const float* src = g.data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void BufferedGradSink::add_outer(Parameter& p, const Tensor& dout, const Tensor& input) {
    Staged& s = staged_[p.slot];
    const int batch = dout.ndim() == 2 ? dout.dim(0) : 1;
    s.m = p.value.dim(0);
    s.n = p.value.dim(1);
    s.rows += batch;
    s.dout_rows.insert(s.dout_rows.end(), dout.data(), dout.data() + dout.size());
    s.input_rows.insert(s.input_rows.end(), input.data(), input.data() + input.size());
}

void BufferedGradSink::flush() {
    for (size_t slot = 0; slot < staged_.size(); ++slot) {
        Staged& s = staged_[slot];
        if (s.rows == 0) continue;
        Tensor& buf = buffer_for(params_.at(slot));
        // dW(M x N) += dY^T(M x rows) * X(rows x N)
        blas::sgemm(true, false, s.m, s.n, s.rows, 1.0f, s.dout_rows.data(), s.m, s.input_rows.data(), s.n, 1.0f,
                    buf.data(), s.n);
        s.dout_rows.clear();
        s.input_rows.clear();
        s.rows = 0;
    }
}

void BufferedGradSink::reduce_into_grads() {
    flush();
    for (size_t slot = 0; slot < buffers_.size(); ++slot) {
        Tensor& buf = buffers_[slot];
        if (buf.empty()) continue;
        float* dst = params_.at(slot).grad.data();
        const float* src = buf.data();
        for (size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
        buf.zero();
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, int, GradSink&)> back) {
    nodes_.push_back(Node{std::move(value), nullptr, Tensor{}, needs_grad, nullptr, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(Val v) const {
    if (!v.valid() || v.i >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("tape: value handle out of range");
}

Tensor& Tape::grad_buf(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty()) n.grad = Tensor(n.ext ? n.ext->shape() : n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad(Val v) {
    check(v);
    return grad_buf(v.i);
}

Tape::Val Tape::input(Tensor v) { return Val{push(std::move(v), false, nullptr)}; }

Tape::Val Tape::param(Parameter& p) {
    auto it = param_index_.find(&p);
    if (it != param_index_.end()) return Val{it->second};
    const int idx = push(Tensor{}, true, nullptr);
    nodes_[static_cast<size_t>(idx)].ext = &p.value;  // alias, not copy
    nodes_[static_cast<size_t>(idx)].bound = &p;
    param_index_.emplace(&p, idx);
    param_leaves_.emplace_back(&p, idx);
    return Val{idx};
}

Tape::Val Tape::conv2d(Val in, Val k, Val b) {
    check(in);
    check(k);
    check(b);
    auto col = std::make_shared<Tensor>();
    Tensor out = kernels::conv2d_forward(val(in.i), val(k.i), val(b.i), col.get());
    const auto dims = kernels::conv_dims(val(in.i), val(k.i), val(b.i));
    const bool ng = needs(in) || needs(k) || needs(b);
    const int ii = in.i, ki = k.i, bi = b.i;
    return Val{push(std::move(out), ng, [col, dims, ii, ki, bi](Tape& t, int self, GradSink&) {
        Tensor* din = t.needs(Val{ii}) ? &t.grad_buf(ii) : nullptr;
        Tensor* dk = t.needs(Val{ki}) ? &t.grad_buf(ki) : nullptr;
        Tensor* db = t.needs(Val{bi}) ? &t.grad_buf(bi) : nullptr;
        kernels::conv2d_backward(dims, t.val(ki), t.grad_buf(self), *col, din, dk, db);
    })};
}

Tape::Val Tape::maxpool2(Val in) {
    check(in);
    auto argmax = std::make_shared<std::vector<uint32_t>>();
    Tensor out = kernels::maxpool2_forward(val(in.i), argmax.get());
    const bool ng = needs(in);
    const int ii = in.i;
    return Val{push(std::move(out), ng, [argmax, ii](Tape& t, int self, GradSink&) {
        if (t.needs(Val{ii})) kernels::maxpool2_backward(t.grad_buf(self), *argmax, t.grad_buf(ii));
    })};
}

Tape::Val Tape::linear(Val in, Val w, Val b) {
    check(in);
    check(w);
    check(b);
    Tensor out = kernels::linear_forward(val(in.i), val(w.i), val(b.i));
    const bool ng = needs(in) || needs(w) || needs(b);
    const int ii = in.i, wi = w.i, bi = b.i;
    return Val{push(std::move(out), ng, [ii, wi, bi](Tape& t, int self, GradSink& sink) {
        const Tensor& dout = t.grad_buf(self);
        if (t.needs(Val{ii})) kernels::linear_backward_input(dout, t.val(wi), t.grad_buf(ii));
        if (t.needs(Val{wi})) {
            Parameter* wp = t.nodes_[static_cast<size_t>(wi)].bound;
            if (wp)
                sink.add_outer(*wp, dout, t.val(ii));  // skip materializing the big dW
            else
                kernels::linear_backward_weights(dout, t.val(ii), t.grad_buf(wi));
        }
        if (t.needs(Val{bi})) kernels::linear_backward_bias(dout, t.grad_buf(bi));
    })};
}

Tape::Val Tape::relu(Val x) {
    check(x);
    Tensor out = kernels::relu_forward(val(x.i));
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(std::move(out), ng, [xi](Tape& t, int self, GradSink&) {
        if (t.needs(Val{xi})) kernels::relu_backward(t.grad_buf(self), t.val(self), t.grad_buf(xi));
    })};
}

Tape::Val Tape::sigmoid(Val x) {
    check(x);
    Tensor out = kernels::sigmoid_forward(val(x.i));
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(std::move(out), ng, [xi](Tape& t, int self, GradSink&) {
        if (t.needs(Val{xi})) kernels::sigmoid_backward(t.grad_buf(self), t.val(self), t.grad_buf(xi));
    })};
}

Tape::Val Tape::flatten(Val x) {
    check(x);
    const Tensor& v = val(x.i);
    std::vector<int> shape;
    if (v.ndim() == 4) {
        shape = {v.dim(0), v.dim(1) * v.dim(2) * v.dim(3)};
    } else {
        shape = {static_cast<int>(v.size())};
    }
    Tensor out = v.reshaped(shape);
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(std::move(out), ng, [xi](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{xi})) return;
        // same memory layout; add elementwise
        Tensor& dst = t.grad_buf(xi);
        const Tensor& src = t.grad_buf(self);
        for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    })};
}

Tape::Val Tape::row(Val x, int r) {
    check(x);
    const Tensor& v = val(x.i);
    if (v.ndim() != 2 || r < 0 || r >= v.dim(0))
        throw std::invalid_argument("row: need [B,N] input and 0 <= r < B, got " + v.shape_str() + " r=" +
                                    std::to_string(r));
    const int n = v.dim(1);
    Tensor out = Tensor::uninit({n});
    std::copy_n(v.data() + static_cast<size_t>(r) * n, n, out.data());
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(std::move(out), ng, [xi, r, n](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{xi})) return;
        float* dst = t.grad_buf(xi).data() + static_cast<size_t>(r) * n;
        const float* src = t.grad_buf(self).data();
        for (int i = 0; i < n; ++i) dst[i] += src[i];
    })};
}

Tape::Val Tape::l2_distance_sq(Val a, Val b) {
    check(a);
    check(b);
    const float d2 = kernels::l2_distance_sq(val(a.i), val(b.i));
    const bool ng = needs(a) || needs(b);
    const int ai = a.i, bi = b.i;
    return Val{push(Tensor::scalar(d2), ng, [ai, bi](Tape& t, int self, GradSink&) {
        const float dy = t.grad_buf(self)[0];
        const Tensor& av = t.val(ai);
        const Tensor& bv = t.val(bi);
        const bool na = t.needs(Val{ai}), nb = t.needs(Val{bi});
        float* da = na ? t.grad_buf(ai).data() : nullptr;
        float* db = nb ? t.grad_buf(bi).data() : nullptr;
        for (size_t i = 0; i < av.size(); ++i) {
            const float g = 2.0f * (av[i] - bv[i]) * dy;
            if (da) da[i] += g;
            if (db) db[i] -= g;
        }
    })};
}

Tape::Val Tape::sqrt_scalar(Val x) {
    check(x);
    const Tensor& v = val(x.i);
    if (v.size() != 1) throw std::invalid_argument("sqrt_scalar expects a scalar, got " + v.shape_str());
    const float y = std::sqrt(v[0]);
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(Tensor::scalar(y), ng, [xi](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{xi})) return;
        const float y = t.val(self)[0];
        // guarded at zero; the incoming chain for distances carries a factor
        // (a-b) that vanishes there, so the product stays finite
        t.grad_buf(xi)[0] += t.grad_buf(self)[0] * 0.5f / std::max(y, 1e-6f);
    })};
}

Tape::Val Tape::l2_normalize(Val x) {
    check(x);
    Tensor out;
    const float norm = kernels::l2_normalize_forward(val(x.i), out);
    const bool ng = needs(x);
    const int xi = x.i;
    return Val{push(std::move(out), ng, [xi, norm](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{xi})) return;
        const Tensor& y = t.val(self);
        const Tensor& dy = t.grad_buf(self);
        double dot = 0.0;
        for (size_t i = 0; i < y.size(); ++i) dot += static_cast<double>(y[i]) * dy[i];
        const float d = static_cast<float>(dot);
        float* dx = t.grad_buf(xi).data();
        for (size_t i = 0; i < y.size(); ++i) dx[i] += (dy[i] - y[i] * d) / norm;
    })};
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

Tape::Val Tape::add(Val a, Val b) {
    check(a);
    check(b);
    check_same_shape(val(a.i), val(b.i), "add");
    Tensor out = Tensor::uninit(val(a.i).shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = val(a.i)[i] + val(b.i)[i];
    const bool ng = needs(a) || needs(b);
    const int ai = a.i, bi = b.i;
    return Val{push(std::move(out), ng, [ai, bi](Tape& t, int self, GradSink&) {
        const Tensor& dy = t.grad_buf(self);
        if (t.needs(Val{ai})) {
            float* da = t.grad_buf(ai).data();
            for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (t.needs(Val{bi})) {
            float* db = t.grad_buf(bi).data();
            for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
    })};
}

Tape::Val Tape::sub(Val a, Val b) {
    check(a);
    check(b);
    check_same_shape(val(a.i), val(b.i), "sub");
    Tensor out = Tensor::uninit(val(a.i).shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = val(a.i)[i] - val(b.i)[i];
    const bool ng = needs(a) || needs(b);
    const int ai = a.i, bi = b.i;
    return Val{push(std::move(out), ng, [ai, bi](Tape& t, int self, GradSink&) {
        const Tensor& dy = t.grad_buf(self);
        if (t.needs(Val{ai})) {
            float* da = t.grad_buf(ai).data();
            for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (t.needs(Val{bi})) {
            float* db = t.grad_buf(bi).data();
            for (size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        }
    })};
}

Tape::Val Tape::mul(Val a, Val b) {
    check(a);
    check(b);
    check_same_shape(val(a.i), val(b.i), "mul");
    Tensor out = Tensor::uninit(val(a.i).shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = val(a.i)[i] * val(b.i)[i];
    const bool ng = needs(a) || needs(b);
    const int ai = a.i, bi = b.i;
    return Val{push(std::move(out), ng, [ai, bi](Tape& t, int self, GradSink&) {
        const Tensor& dy = t.grad_buf(self);
        const Tensor& av = t.val(ai);
        const Tensor& bv = t.val(bi);
        if (t.needs(Val{ai})) {
            float* da = t.grad_buf(ai).data();
            for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
        }
        if (t.needs(Val{bi})) {
            float* db = t.grad_buf(bi).data();
            for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
        }
    })};
}

Tape::Val Tape::add_const(Val a, float c) {
    check(a);
    Tensor out = Tensor::uninit(val(a.i).shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = val(a.i)[i] + c;
    const bool ng = needs(a);
    const int ai = a.i;
    return Val{push(std::move(out), ng, [ai](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{ai})) return;
        const Tensor& dy = t.grad_buf(self);
        float* da = t.grad_buf(ai).data();
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    })};
}

Tape::Val Tape::scale(Val a, float c) {
    check(a);
    Tensor out = Tensor::uninit(val(a.i).shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = val(a.i)[i] * c;
    const bool ng = needs(a);
    const int ai = a.i;
    return Val{push(std::move(out), ng, [ai, c](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{ai})) return;
        const Tensor& dy = t.grad_buf(self);
        float* da = t.grad_buf(ai).data();
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
    })};
}

Tape::Val Tape::bce_loss(Val prediction, float target) {
    check(prediction);
    if (target != 0.0f && target != 1.0f)
        throw std::invalid_argument("bce_loss: target must be 0 or 1, got " + std::to_string(target));
    const Tensor& p = val(prediction.i);
    if (p.size() != 1) throw std::invalid_argument("bce_loss expects a scalar prediction, got " + p.shape_str());

    constexpr double kEps = 1e-7;
    const double pc = std::min(std::max(static_cast<double>(p[0]), kEps), 1.0 - kEps);
    const double loss = -(target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc));
    const bool ng = needs(prediction);
    const int pi = prediction.i;
    return Val{push(Tensor::scalar(static_cast<float>(loss)), ng, [pi, target, pc](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{pi})) return;
        const double dldp = -target / pc + (1.0 - target) / (1.0 - pc);
        t.grad_buf(pi)[0] += t.grad_buf(self)[0] * static_cast<float>(dldp);
    })};
}

Tape::Val Tape::weighted_sum(Val x, Tensor weights) {
    check(x);
    check_same_shape(val(x.i), weights, "weighted_sum");
    double s = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(weights[i]) * val(x.i)[i];
    const bool ng = needs(x);
    const int xi = x.i;
    auto w = std::make_shared<Tensor>(std::move(weights));
    return Val{push(Tensor::scalar(static_cast<float>(s)), ng, [xi, w](Tape& t, int self, GradSink&) {
        if (!t.needs(Val{xi})) return;
        const float dy = t.grad_buf(self)[0];
        float* dx = t.grad_buf(xi).data();
        for (size_t i = 0; i < w->size(); ++i) dx[i] += dy * (*w)[i];
    })};
}

void Tape::backward(Val loss, GradSink& sink, float seed) {
    check(loss);
    if (swept_) throw std::logic_error("backward: tape already swept; record a fresh tape per backward pass");
    swept_ = true;
    if (val(loss.i).size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + val(loss.i).shape_str());

    grad_buf(loss.i)[0] += seed;
    for (int i = loss.i; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back && n.needs_grad && grad_ready(i)) n.back(*this, i, sink);
    }
    for (auto& [p, idx] : param_leaves_) {
        if (grad_ready(idx)) sink.add(*p, nodes_[static_cast<size_t>(idx)].grad);
    }
}

void Tape::backward(Val loss) {
    DirectGradSink sink;
    backward(loss, sink);
}

}  // namespace oneshot
