#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stainkit/tensor.hpp"

/// Differentiable tensor operations. Every function records a backward rule
/// on the active tape when one of its inputs requires a gradient.
namespace stainkit::ops {

// Elementwise. Shapes must match, or one side must hold a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);

/// [m,k]·[k,n] or batched [b,m,k]·[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose_last(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);

/// Adds bias[n] along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Adds bias[C] to every (b, c, ·, ·) plane of an NCHW tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// (B, C, H, W) -> (B, H·W, C).
Tensor map_to_tokens(const Tensor& x);
/// (B, H·W, C) -> (B, C, H, W).
Tensor tokens_to_map(const Tensor& x, std::size_t height, std::size_t width);
/// (B, T, heads·dh) -> (B·heads, T, dh).
Tensor split_heads(const Tensor& x, std::size_t heads);
/// (B·heads, T, dh) -> (B, T, heads·dh).
Tensor merge_heads(const Tensor& x, std::size_t heads);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
/// Per-channel standardization of each (b, c) plane of an NCHW tensor, no affine part.
Tensor instance_norm(const Tensor& x, float eps = 1e-5f);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// (B, C, H, W) -> (B, C) spatial average.
Tensor global_avg_pool(const Tensor& x);
/// L2 norm of every row of a [n, d] tensor -> [n]; gradient is zero at a zero row.
Tensor row_norms(const Tensor& x);

/// dot(a,b) / (|a|·|b| + eps) over the flattened inputs. Zero-by-zero inputs
/// give 0 and increment diagnostics().cosine_zero_guard.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps = 1e-8f);
/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Value-identical copy that never propagates gradient to x.
Tensor stop_gradient(const Tensor& x);
/// Rows of table[K, d] selected by `indices`; gradient scatters back into table.
Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> indices);
/// Forward value is table rows (selected by `indices`), backward copies the
/// incoming gradient to `input` unchanged and scatters it into `table`.
Tensor straight_through_select(const Tensor& input, const Tensor& table, std::span<const std::uint32_t> indices);

// Convolutions use cross-correlation and NCHW layout.
/// input [B,C,H,W], kernel [O,C,kh,kw] -> [B,O,(H+2p-kh)/s+1,(W+2p-kw)/s+1].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// input [B,Ci,H,W], kernel [Ci,Co,kh,kw] -> [B,Co,(H-1)s-2p+kh,(W-1)s-2p+kw]; adjoint of conv2d.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

}  // namespace stainkit::ops
