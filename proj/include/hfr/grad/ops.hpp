#pragma once

#include <cstddef>
#include <vector>

#include "hfr/grad/graph.hpp"
#include "hfr/grad/tensor.hpp"

// Differentiable operations over Graph nodes. Every op validates shapes up
// front and throws DimensionError naming the offending axis.
namespace hfr::grad {

// Image layout is NCHW unless stated otherwise.

/// Dense 2-D convolution. weight is O x I x kH x kW, bias has O entries.
Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);

/// Per-channel 3-D kernel with stride 1. weight is C x 1 x kH x kW.
Var depthwise_conv2d(Var input, Var weight, Var bias, std::size_t padding);

/// Affine map over the last axis: input (... x Din), weight (Dout x Din),
/// bias (Dout). Leading axes are treated as rows.
Var linear(Var input, Var weight, Var bias);

/// Normalizes each row of the last axis with population variance.
Var layer_norm(Var input, Var gamma, Var beta, double epsilon);

/// GELU, tanh approximation.
Var gelu(Var input);

/// Single-head self-attention over N x T x D tokens: softmax(Q K^T / sqrt(D)) V
/// followed by the output projection. Projections are right-multiplied
/// (Q = X * wq), all D x D, without biases.
Var attention(Var tokens, Var wq, Var wk, Var wv, Var wo);

/// Attention probabilities (N x T x T) for the given tokens; not differentiable.
Tensor attention_weights(const Tensor& tokens, const Tensor& wq, const Tensor& wk);

/// Mean over H and W; N x C x H x W -> N x C.
Var global_avg_pool(Var input);

/// NCHW -> NHWC.
Var to_channels_last(Var input);
/// NHWC -> NCHW.
Var to_channels_first(Var input);

Var reshape(Var input, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// scale * x + shift, elementwise.
Var affine(Var x, double scale, double shift);
/// max(0, x); the derivative at exactly 0 is taken as 0.
Var relu(Var x);
/// Sum of all elements as a 1-element tensor.
Var sum(Var x);
Var mean(Var x);

/// Row-wise cosine similarity of two N x D matrices, giving N values.
/// Throws std::domain_error when a row has norm <= 1e-12.
Var row_cosine(Var a, Var b);

}  // namespace hfr::grad
