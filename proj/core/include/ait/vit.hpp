#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "ait/tensor.hpp"

namespace ait {

/// Embedded patches for a batch of images plus where each row came from.
struct PatchBatch {
    Tensor embeddings;  // [B x N x E]
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    /// sample index of each of the B*N patches, sample-major.
    std::vector<std::size_t> sample_ids;

    std::size_t batch() const { return embeddings.dim(0); }
    std::size_t patches() const { return embeddings.dim(1); }
};

/// Multi-head self-attention weights. Heads are packed column-wise: columns
/// [h*head_dim, (h+1)*head_dim) of wq/wk/wv belong to head h.
struct AttentionParams {
    Tensor wq;  // [E x A*Dh]
    Tensor wk;
    Tensor wv;
    Tensor wo;  // [A*Dh x E]
    std::size_t heads = 1;

    std::size_t head_dim() const { return wq.dim(1) / heads; }
    static AttentionParams init(std::size_t embed_dim, std::size_t heads, std::mt19937_64& rng);
};

struct FeedForwardParams {
    Tensor w1;  // [E x H]
    Tensor b1;  // [H]
    Tensor w2;  // [H x E]
    Tensor b2;  // [E]

    static FeedForwardParams init(std::size_t embed_dim, std::size_t hidden_dim, std::mt19937_64& rng);
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    static LayerNormParams init(std::size_t dim);
};

struct HeadParams {
    Tensor w;  // [E x classes]
    Tensor b;  // [classes]

    static HeadParams init(std::size_t embed_dim, std::size_t classes, std::mt19937_64& rng);
};

/// Xavier-normal weight matrix [fan_in x fan_out].
Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Splits image[H x W x C] into N = HW/P^2 raster-ordered patches of P*P*C values.
Tensor patchify(const Tensor& image, std::size_t patch_size);
/// Batched form: images[B x H x W x C] -> [B x N x P*P*C].
Tensor patchify_batch(const Tensor& images, std::size_t patch_size);
/// Inverse of patchify for a single image.
Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch_size);

/// Linear projection plus additive position embedding (no class token).
/// patches may be [N x P*P*C] or [B x N x P*P*C].
Tensor embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& pos_embedding);

/// softmax(Q K^T / sqrt(Dh)) V per sample and head, heads concatenated and
/// mapped by W^O. If probs is non-null it receives the [B x A x N x N] scores.
Tensor self_attention(const Tensor& v, const AttentionParams& p, Tensor* probs = nullptr);

/// linear -> gelu -> linear over the last axis.
Tensor feed_forward(const Tensor& v, const FeedForwardParams& p);

/// Mean over the patch axis, then linear map to class logits.
Tensor pooled_head(const Tensor& v, const HeadParams& p);

enum class NormPlacement { pre, post };

/// norm -> self-attention -> residual, norm -> feed-forward -> residual
/// (pre placement), or sublayer -> residual -> norm (post placement).
struct TransformerBlockParams {
    LayerNormParams ln_attn;
    AttentionParams attn;
    LayerNormParams ln_ff;
    FeedForwardParams ff;
};

Tensor transformer_block(const Tensor& v, const TransformerBlockParams& p, NormPlacement placement,
                         bool use_attention = true, bool use_ff = true, Tensor* probs = nullptr);

}  // namespace ait
