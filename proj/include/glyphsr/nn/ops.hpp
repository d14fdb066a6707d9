#pragma once

#include <cstdint>
#include <vector>

#include "glyphsr/nn/tensor.hpp"

namespace glyphsr::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Sum of all entries.
Tensor sum(const Tensor& x);

// x: [..., in], w: [out, in], b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [B, C, H, W], w: [O, C, k, k], b: [O] or undefined. Stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad);

// x: [B, C, ...]; statistics per (sample, group of C / groups channels).
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Normalizes the last dimension.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: [B, C, H, W] plus v: [B, C] broadcast over space.
Tensor add_channel_bias(const Tensor& x, const Tensor& v);

// Views x as rows of equal length (rows = factors.size()) and scales row r by factors[r].
Tensor scale_rows(const Tensor& x, const std::vector<double>& factors);

// x: [B, D] + coeff[b] * v, v: [D].
Tensor add_scaled_vector(const Tensor& x, const Tensor& v, const std::vector<double>& coeff);

// Adds a constant broadcast over the leading dimension (c.size() == numel / dim(0)).
Tensor add_constant(const Tensor& x, const std::vector<double>& c);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor avg_pool2d(const Tensor& x, int factor);
Tensor upsample_nearest(const Tensor& x, int factor);

// [B, C, H, W] <-> [B, H*W, C]
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& x, int height, int width);

// Zero-pads or crops the bottom/right edges to (height, width).
Tensor pad_to(const Tensor& x, int height, int width);

// table: [V, D]; returns [ids.size(), D] reshaped to prefix + [D].
Tensor embedding(const Tensor& table, const std::vector<int>& ids, Shape prefix);

// Multi-head scaled dot-product attention. q: [B, Lq, D], k, v: [B, Lk, D].
// key_mask (B * Lk, 1 = attend) may be empty. Query rows with no valid key output zero.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::vector<std::uint8_t>& key_mask);

// Mean squared error of each sample (dim 0) against a constant target; returns [B].
Tensor per_sample_mse(const Tensor& pred, const std::vector<double>& target);

// Mean of a vector reduced in sorted order, so it is invariant to permutations.
Tensor sorted_mean(const Tensor& x);

}  // namespace glyphsr::nn
