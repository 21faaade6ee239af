#pragma once

#include <span>
#include <vector>

#include "grtrack/tensor.hpp"

// Differentiable tensor primitives. Every op records a backward closure when
// gradient mode is on and at least one input requires a gradient.
namespace grtrack::ops {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);   // [M,K] x [K,N]
Tensor transpose(const Tensor& a);                 // 2-D only
/// x[M,in] * weight[in,out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise, identical shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);
/// Values clamped to [lo, hi]; gradient passes only strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);

// Broadcasting helpers for 2-D tensors
Tensor add_bias(const Tensor& x, const Tensor& bias);  // x[M,N] + bias[N]
Tensor mul_cols(const Tensor& x, const Tensor& v);     // x[M,N] * v[N] per column
Tensor mul_rows(const Tensor& x, const Tensor& v);     // x[M,N] * v[M] per row
Tensor row_sums(const Tensor& x);                      // x[M,N] -> [M]

// Normalisation
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_lastdim(const Tensor& x);

// Layout
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Single element as a [1] tensor.
Tensor element(const Tensor& x, std::size_t flat_index);
/// Concatenates flattened inputs into a 1-D tensor.
Tensor pack(std::span<const Tensor> parts);

/// 2-D convolution, stride 1, square kernel, zero padding.
/// x[Cin,H,W], weight[Cout,Cin,K,K], bias[Cout] -> [Cout,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad);

/// Forward value `hard`, backward identity into `soft` (straight-through).
Tensor straight_through(std::vector<double> hard, const Tensor& soft);

}  // namespace grtrack::ops
