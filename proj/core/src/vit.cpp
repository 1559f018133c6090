#include "ait/vit.hpp"

#include <cmath>
#include <string>

#include "ait/error.hpp"
#include "ait/ops.hpp"

namespace ait {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::randn({fan_in, fan_out}, rng, static_cast<Scalar>(stddev));
}

AttentionParams AttentionParams::init(std::size_t embed_dim, std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || embed_dim % heads != 0) {
        throw ConfigError("embedding width " + std::to_string(embed_dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.heads = heads;
    p.wq = xavier(embed_dim, embed_dim, rng);
    p.wk = xavier(embed_dim, embed_dim, rng);
    p.wv = xavier(embed_dim, embed_dim, rng);
    p.wo = xavier(embed_dim, embed_dim, rng);
    return p;
}

FeedForwardParams FeedForwardParams::init(std::size_t embed_dim, std::size_t hidden_dim, std::mt19937_64& rng) {
    FeedForwardParams p;
    p.w1 = xavier(embed_dim, hidden_dim, rng);
    p.b1 = Tensor({hidden_dim});
    p.w2 = xavier(hidden_dim, embed_dim, rng);
    p.b2 = Tensor({embed_dim});
    return p;
}

LayerNormParams LayerNormParams::init(std::size_t dim) { return {Tensor({dim}, Scalar(1)), Tensor({dim})}; }

HeadParams HeadParams::init(std::size_t embed_dim, std::size_t classes, std::mt19937_64& rng) {
    return {xavier(embed_dim, classes, rng), Tensor({classes})};
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
    if (image.rank() != 3) throw ShapeError("patchify expects [H x W x C], got " + shape_str(image.shape()));
    Tensor batched = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
    Tensor out = patchify_batch(batched, patch_size);
    return reshape(out, {out.dim(1), out.dim(2)});
}

Tensor patchify_batch(const Tensor& images, std::size_t patch_size) {
    if (images.rank() != 4) throw ShapeError("patchify expects [B x H x W x C], got " + shape_str(images.shape()));
    const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
    if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch size " +
                         std::to_string(patch_size));
    }
    // [B, gr, P, gc, P, C] -> [B, gr, gc, P, P, C]
    const std::size_t gr = h / patch_size, gc = w / patch_size;
    Tensor grid = reshape(images, {b, gr, patch_size, gc, patch_size, c});
    Tensor moved = permute(grid, {0, 1, 3, 2, 4, 5});
    return reshape(moved, {b, gr * gc, patch_size * patch_size * c});
}

Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch_size) {
    const std::size_t gr = height / patch_size, gc = width / patch_size;
    if (patch_size == 0 || height % patch_size || width % patch_size || patches.numel() != height * width * channels) {
        throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " does not tile a " + std::to_string(height) + "x" +
                         std::to_string(width) + "x" + std::to_string(channels) + " image");
    }
    Tensor grid = reshape(patches, {gr, gc, patch_size, patch_size, channels});
    Tensor moved = permute(grid, {0, 2, 1, 3, 4});
    return reshape(moved, {height, width, channels});
}

Tensor embed_patches(const Tensor& patches, const Tensor& projection, const Tensor& pos_embedding) {
    Tensor projected = linear(patches, projection);
    const std::size_t n = projected.dim(projected.rank() - 2);
    if (pos_embedding.rank() != 2 || pos_embedding.dim(0) != n || pos_embedding.dim(1) != projected.shape().back()) {
        throw ShapeError("position embedding " + shape_str(pos_embedding.shape()) + " does not match patches " +
                         shape_str(projected.shape()));
    }
    return add(projected, pos_embedding);
}

Tensor self_attention(const Tensor& v, const AttentionParams& p, Tensor* probs) {
    if (v.rank() != 3) throw ShapeError("self_attention expects [B x N x E], got " + shape_str(v.shape()));
    const std::size_t b = v.dim(0), n = v.dim(1);
    const std::size_t heads = p.heads, dh = p.head_dim();
    auto split = [&](const Tensor& w) {
        Tensor x = linear(v, w);
        return permute(reshape(x, {b, n, heads, dh}), {0, 2, 1, 3});
    };
    Tensor q = split(p.wq);
    Tensor k = split(p.wk);
    Tensor val = split(p.wv);
    Tensor scores = scale(bmm(q, transpose(k)), Scalar(1) / std::sqrt(static_cast<Scalar>(dh)));
    Tensor attn = softmax(scores, 3);
    if (probs) *probs = attn;
    Tensor mixed = permute(bmm(attn, val), {0, 2, 1, 3});
    return linear(reshape(mixed, {b, n, heads * dh}), p.wo);
}

Tensor feed_forward(const Tensor& v, const FeedForwardParams& p) {
    return linear(gelu(linear(v, p.w1, &p.b1)), p.w2, &p.b2);
}

Tensor pooled_head(const Tensor& v, const HeadParams& p) {
    if (v.rank() != 3) throw ShapeError("pooled_head expects [B x N x E], got " + shape_str(v.shape()));
    return linear(mean(v, 1), p.w, &p.b);
}

Tensor transformer_block(const Tensor& v, const TransformerBlockParams& p, NormPlacement placement,
                         bool use_attention, bool use_ff, Tensor* probs) {
    Tensor x = v;
    if (use_attention) {
        if (placement == NormPlacement::pre) {
            x = add(x, self_attention(layer_norm(x, p.ln_attn.gain, p.ln_attn.bias), p.attn, probs));
        } else {
            x = layer_norm(add(x, self_attention(x, p.attn, probs)), p.ln_attn.gain, p.ln_attn.bias);
        }
    }
    if (use_ff) {
        if (placement == NormPlacement::pre) {
            x = add(x, feed_forward(layer_norm(x, p.ln_ff.gain, p.ln_ff.bias), p.ff));
        } else {
            x = layer_norm(add(x, feed_forward(x, p.ff)), p.ln_ff.gain, p.ln_ff.bias);
        }
    }
    return x;
}

}  // namespace ait
