#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace oneshot::kernels {

/// Resolved geometry for a valid-padding, stride-1 convolution.
/// Input is [C,H,W] or [B,C,H,W]; kernels [O,C,Kh,Kw]; bias [O].
struct ConvDims {
    int batch;  // 1 for rank-3 input
    bool batched;
    int in_c, in_h, in_w;
    int out_c, kh, kw;
    int out_h, out_w;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// out[o,i,j] = bias[o] + sum_{c,a,b} in[c,i+a,j+b] * k[o,c,a,b].
/// col_cache, when given, receives the im2col matrices ([B, C*Kh*Kw, outH*outW])
/// for reuse in the backward pass.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias, Tensor* col_cache);

/// Accumulates into any non-null gradient output.
void conv2d_backward(const ConvDims& d, const Tensor& kernels, const Tensor& dout, const Tensor& col_cache,
                     Tensor* dinput, Tensor* dkernels, Tensor* dbias);

/// Non-overlapping 2x2 max pooling; H and W must be even. argmax, when given,
/// records the flat input index of each window maximum (first in scan order
/// on ties) for the backward routing.
Tensor maxpool2_forward(const Tensor& input, std::vector<uint32_t>* argmax);
void maxpool2_backward(const Tensor& dout, const std::vector<uint32_t>& argmax, Tensor& dinput);

/// out = W x + b for input [N] -> [M], or row-wise for input [B,N] -> [B,M].
Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
void linear_backward_input(const Tensor& dout, const Tensor& weights, Tensor& dinput);
void linear_backward_weights(const Tensor& dout, const Tensor& input, Tensor& dweights);
void linear_backward_bias(const Tensor& dout, Tensor& dbias);

Tensor relu_forward(const Tensor& input);
void relu_backward(const Tensor& dout, const Tensor& out, Tensor& dinput);

Tensor sigmoid_forward(const Tensor& input);
void sigmoid_backward(const Tensor& dout, const Tensor& out, Tensor& dinput);

/// Sum of squared differences of two equal-length vectors.
float l2_distance_sq(const Tensor& a, const Tensor& b);

/// y = x / max(||x||, eps); returns the clamped norm.
float l2_normalize_forward(const Tensor& input, Tensor& out);

}  // namespace oneshot::kernels
