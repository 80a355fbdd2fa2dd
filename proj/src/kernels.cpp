#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "blas.hpp"

namespace oneshot::kernels {

namespace {

void im2col(const float* im, int c, int h, int w, int kh, int kw, int out_h, int out_w, float* col) {
    // col is [c*kh*kw, out_h*out_w] row-major
    const int ohw = out_h * out_w;
    for (int ch = 0; ch < c; ++ch) {
        for (int a = 0; a < kh; ++a) {
            for (int b = 0; b < kw; ++b) {
                float* dst = col + (static_cast<size_t>(ch) * kh * kw + static_cast<size_t>(a) * kw + b) * ohw;
                const float* src = im + (static_cast<size_t>(ch) * h + a) * w + b;
                for (int i = 0; i < out_h; ++i) {
                    std::memcpy(dst, src + static_cast<size_t>(i) * w, static_cast<size_t>(out_w) * sizeof(float));
                    dst += out_w;
                }
            }
        }
    }
}

void col2im_accum(const float* col, int c, int h, int w, int kh, int kw, int out_h, int out_w, float* im) {
    const int ohw = out_h * out_w;
    for (int ch = 0; ch < c; ++ch) {
        for (int a = 0; a < kh; ++a) {
            for (int b = 0; b < kw; ++b) {
                const float* src = col + (static_cast<size_t>(ch) * kh * kw + static_cast<size_t>(a) * kw + b) * ohw;
                float* dst = im + (static_cast<size_t>(ch) * h + a) * w + b;
                for (int i = 0; i < out_h; ++i) {
                    float* row = dst + static_cast<size_t>(i) * w;
                    for (int j = 0; j < out_w; ++j) row[j] += src[j];
                    src += out_w;
                }
            }
        }
    }
}

}  // namespace

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    if (kernels.ndim() != 4)
        throw std::invalid_argument("conv2d kernels must be [O,C,Kh,Kw], got " + kernels.shape_str());
    if (input.ndim() != 3 && input.ndim() != 4)
        throw std::invalid_argument("conv2d input must be [C,H,W] or [B,C,H,W], got " + input.shape_str());

    ConvDims d{};
    d.batched = input.ndim() == 4;
    d.batch = d.batched ? input.dim(0) : 1;
    const int off = d.batched ? 1 : 0;
    d.in_c = input.dim(off);
    d.in_h = input.dim(off + 1);
    d.in_w = input.dim(off + 2);
    d.out_c = kernels.dim(0);
    d.kh = kernels.dim(2);
    d.kw = kernels.dim(3);

    if (kernels.dim(1) != d.in_c)
        throw std::invalid_argument("conv2d channel mismatch: input " + input.shape_str() + " vs kernels " +
                                    kernels.shape_str());
    if (d.kh > d.in_h || d.kw > d.in_w)
        throw std::invalid_argument("conv2d kernel " + kernels.shape_str() + " larger than input " +
                                    input.shape_str());
    if (bias.ndim() != 1 || bias.dim(0) != d.out_c)
        throw std::invalid_argument("conv2d bias must be [" + std::to_string(d.out_c) + "], got " + bias.shape_str());

    d.out_h = d.in_h - d.kh + 1;
    d.out_w = d.in_w - d.kw + 1;
    return d;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, Tensor* col_cache) {
    const ConvDims d = conv_dims(input, kernels, bias);
    const int ckk = d.in_c * d.kh * d.kw;
    const int ohw = d.out_h * d.out_w;

    Tensor out = Tensor::uninit(d.batched ? std::vector<int>{d.batch, d.out_c, d.out_h, d.out_w}
                                          : std::vector<int>{d.out_c, d.out_h, d.out_w});

    Tensor local_col;
    Tensor& col = col_cache ? *col_cache : local_col;
    col = Tensor::uninit({d.batch, ckk, ohw});

    const size_t im_stride = static_cast<size_t>(d.in_c) * d.in_h * d.in_w;
    const size_t out_stride = static_cast<size_t>(d.out_c) * ohw;
    const size_t col_stride = static_cast<size_t>(ckk) * ohw;

    for (int b = 0; b < d.batch; ++b) {
        float* colb = col.data() + static_cast<size_t>(b) * col_stride;
        im2col(input.data() + static_cast<size_t>(b) * im_stride, d.in_c, d.in_h, d.in_w, d.kh, d.kw, d.out_h, d.out_w,
               colb);
        float* outb = out.data() + static_cast<size_t>(b) * out_stride;
        for (int o = 0; o < d.out_c; ++o) std::fill_n(outb + static_cast<size_t>(o) * ohw, ohw, bias[static_cast<size_t>(o)]);
        // out[o, :] += K[o, :] * col
        blas::sgemm(false, false, d.out_c, ohw, ckk, 1.0f, kernels.data(), ckk, colb, ohw, 1.0f, outb, ohw);
    }
    return out;
}

void conv2d_backward(const ConvDims& d, const Tensor& kernels, const Tensor& dout, const Tensor& col_cache,
                     Tensor* dinput, Tensor* dkernels, Tensor* dbias) {
    const int ckk = d.in_c * d.kh * d.kw;
    const int ohw = d.out_h * d.out_w;
    const size_t im_stride = static_cast<size_t>(d.in_c) * d.in_h * d.in_w;
    const size_t out_stride = static_cast<size_t>(d.out_c) * ohw;
    const size_t col_stride = static_cast<size_t>(ckk) * ohw;

    Tensor colgrad;
    if (dinput) colgrad = Tensor::uninit({ckk, ohw});

    for (int b = 0; b < d.batch; ++b) {
        const float* doutb = dout.data() + static_cast<size_t>(b) * out_stride;
        const float* colb = col_cache.data() + static_cast<size_t>(b) * col_stride;

        if (dkernels)  // dK[o,:] += dOut[o,:] * col^T
            blas::sgemm(false, true, d.out_c, ckk, ohw, 1.0f, doutb, ohw, colb, ohw, 1.0f, dkernels->data(), ckk);

        if (dbias) {
            for (int o = 0; o < d.out_c; ++o) {
                const float* row = doutb + static_cast<size_t>(o) * ohw;
                double s = 0.0;
                for (int i = 0; i < ohw; ++i) s += row[i];
                (*dbias)[static_cast<size_t>(o)] += static_cast<float>(s);
            }
        }

        if (dinput) {  // colgrad = K^T * dOut, then scatter back to image layout
            blas::sgemm(true, false, ckk, ohw, d.out_c, 1.0f, kernels.data(), ckk, doutb, ohw, 0.0f, colgrad.data(),
                        ohw);
            col2im_accum(colgrad.data(), d.in_c, d.in_h, d.in_w, d.kh, d.kw, d.out_h, d.out_w,
                         dinput->data() + static_cast<size_t>(b) * im_stride);
        }
    }
}

Tensor maxpool2_forward(const Tensor& input, std::vector<uint32_t>* argmax) {
    if (input.ndim() != 3 && input.ndim() != 4)
        throw std::invalid_argument("maxpool2 input must be [C,H,W] or [B,C,H,W], got " + input.shape_str());
    const bool batched = input.ndim() == 4;
    const int batch = batched ? input.dim(0) : 1;
    const int c = input.dim(batched ? 1 : 0);
    const int h = input.dim(batched ? 2 : 1);
    const int w = input.dim(batched ? 3 : 2);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2 requires even spatial dims, got " + input.shape_str());

    const int oh = h / 2, ow = w / 2;
    Tensor out = Tensor::uninit(batched ? std::vector<int>{batch, c, oh, ow} : std::vector<int>{c, oh, ow});
    if (argmax) argmax->assign(out.size(), 0);

    const float* in = input.data();
    float* op = out.data();
    size_t oidx = 0;
    for (int bc = 0; bc < batch * c; ++bc) {
        const size_t plane = static_cast<size_t>(bc) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j, ++oidx) {
                const size_t base = plane + static_cast<size_t>(2 * i) * w + 2 * j;
                // first cell in row-major scan order wins ties
                size_t best = base;
                float bv = in[base];
                const size_t cand[3] = {base + 1, base + w, base + w + 1};
                for (size_t cidx : cand) {
                    if (in[cidx] > bv) {
                        bv = in[cidx];
                        best = cidx;
                    }
                }
                op[oidx] = bv;
                if (argmax) (*argmax)[oidx] = static_cast<uint32_t>(best);
            }
        }
    }
    return out;
}

void maxpool2_backward(const Tensor& dout, const std::vector<uint32_t>& argmax, Tensor& dinput) {
    const float* g = dout.data();
    float* di = dinput.data();
    for (size_t i = 0; i < dout.size(); ++i) di[argmax[i]] += g[i];
}

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (weights.ndim() != 2) throw std::invalid_argument("linear weights must be [M,N], got " + weights.shape_str());
    const int m = weights.dim(0), n = weights.dim(1);
    if (input.ndim() != 1 && input.ndim() != 2)
        throw std::invalid_argument("linear input must be [N] or [B,N], got " + input.shape_str());
    const bool batched = input.ndim() == 2;
    const int batch = batched ? input.dim(0) : 1;
    const int in_n = input.dim(batched ? 1 : 0);
    if (in_n != n)
        throw std::invalid_argument("linear dimension mismatch: input " + input.shape_str() + " vs weights " +
                                    weights.shape_str());
    if (bias.ndim() != 1 || bias.dim(0) != m)
        throw std::invalid_argument("linear bias must be [" + std::to_string(m) + "], got " + bias.shape_str());

    Tensor out = Tensor::uninit(batched ? std::vector<int>{batch, m} : std::vector<int>{m});
    for (int b = 0; b < batch; ++b)
        std::copy_n(bias.data(), m, out.data() + static_cast<size_t>(b) * m);
    // out(B x M) += X(B x N) * W^T(N x M)
    blas::sgemm(false, true, batch, m, n, 1.0f, input.data(), n, weights.data(), n, 1.0f, out.data(), m);
    return out;
}

void linear_backward_input(const Tensor& dout, const Tensor& weights, Tensor& dinput) {
    const int m = weights.dim(0), n = weights.dim(1);
    const int batch = dout.ndim() == 2 ? dout.dim(0) : 1;
    // dX(B x N) += dY(B x M) * W(M x N)
    blas::sgemm(false, false, batch, n, m, 1.0f, dout.data(), m, weights.data(), n, 1.0f, dinput.data(), n);
}

void linear_backward_weights(const Tensor& dout, const Tensor& input, Tensor& dweights) {
    const int m = dweights.dim(0), n = dweights.dim(1);
    const int batch = dout.ndim() == 2 ? dout.dim(0) : 1;
    // dW(M x N) += dY^T(M x B) * X(B x N)
    blas::sgemm(true, false, m, n, batch, 1.0f, dout.data(), m, input.data(), n, 1.0f, dweights.data(), n);
}

void linear_backward_bias(const Tensor& dout, Tensor& dbias) {
    const int m = dbias.dim(0);
    const int batch = dout.ndim() == 2 ? dout.dim(0) : 1;
    for (int b = 0; b < batch; ++b) {
        const float* row = dout.data() + static_cast<size_t>(b) * m;
        for (int i = 0; i < m; ++i) dbias[static_cast<size_t>(i)] += row[i];
    }
}

Tensor relu_forward(const Tensor& input) {
    Tensor out = Tensor::uninit(input.shape());
    const float* in = input.data();
    float* o = out.data();
    for (size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
    return out;
}

void relu_backward(const Tensor& dout, const Tensor& out, Tensor& dinput) {
    const float* g = dout.data();
    const float* o = out.data();
    float* di = dinput.data();
    for (size_t i = 0; i < dout.size(); ++i)
        if (o[i] > 0.0f) di[i] += g[i];
}

Tensor sigmoid_forward(const Tensor& input) {
    Tensor out = Tensor::uninit(input.shape());
    const float* in = input.data();
    float* o = out.data();
    for (size_t i = 0; i < input.size(); ++i) o[i] = 1.0f / (1.0f + std::exp(-in[i]));
    return out;
}

void sigmoid_backward(const Tensor& dout, const Tensor& out, Tensor& dinput) {
    const float* g = dout.data();
    const float* o = out.data();
    float* di = dinput.data();
    for (size_t i = 0; i < dout.size(); ++i) di[i] += g[i] * o[i] * (1.0f - o[i]);
}

float l2_distance_sq(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("l2_distance_sq length mismatch: " + a.shape_str() + " vs " + b.shape_str());
    const float* pa = a.data();
    const float* pb = b.data();
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        s += d * d;
    }
    return static_cast<float>(s);
}

float l2_normalize_forward(const Tensor& input, Tensor& out) {
    double s = 0.0;
    for (size_t i = 0; i < input.size(); ++i) s += static_cast<double>(input[i]) * input[i];
    const float norm = std::max(static_cast<float>(std::sqrt(s)), 1e-12f);
    out = Tensor::uninit(input.shape());
    const float inv = 1.0f / norm;
    for (size_t i = 0; i < input.size(); ++i) out[i] = input[i] * inv;
    return norm;
}

}  // namespace oneshot::kernels
