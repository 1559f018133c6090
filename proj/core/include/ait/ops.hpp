#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ait/tensor.hpp"

// Differentiable kernels. Every function records a backward rule on the
// active GradTape when at least one input requires a gradient.

namespace ait {

inline constexpr Scalar kLayerNormEps = Scalar(1e-5);

// Elementwise. Binary ops broadcast numpy-style (b may also be rank-0).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);

// Reductions over one axis. keepdim leaves a unit extent in place.
Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false);
/// Population variance (divides by the extent).
Tensor variance(const Tensor& a, std::size_t axis, bool keepdim = false);
/// Gradient goes to the first maximal entry.
Tensor max(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Linear algebra.
/// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over matching leading extents: a[... x m x k] * b[... x k x n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[... x in] * w[in x out] (+ bias[out]); bias may be an empty pointer.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// Normalization and attention primitives.
Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes the last axis to zero mean / unit variance, then gain * x + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
/// beta^-1 * log(sum_i exp(beta * z_i)) over all elements of z, max-shifted.
Tensor lse(Scalar beta, const Tensor& z);
/// Keeps the k largest entries of each last-axis row verbatim and zeroes the
/// rest. Ties at the k-th value go to the lower index. No renormalization.
Tensor top_k_mask(const Tensor& scores, std::size_t k);
/// Selection mask (1 = kept) that top_k_mask would apply, without recording.
std::vector<unsigned char> top_k_selection(const Tensor& scores, std::size_t k);

/// Mean negative log-likelihood of softmax(logits[B x C]) at labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ait
