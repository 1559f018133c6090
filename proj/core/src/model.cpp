#include "ait/model.hpp"

#include <cmath>
#include <random>

#include "ait/data.hpp"
#include "ait/error.hpp"
#include "ait/hopfield.hpp"
#include "ait/ops.hpp"

namespace ait {

namespace {

constexpr std::uint64_t kParamStream = 0x9a7a;
constexpr std::uint64_t kMemoryStream = 0x3e3a;

std::size_t workspace_k(const ModelConfig& m, const AblationConfig& a, std::size_t positions) {
    const std::size_t budget = m.topk_scope == TopkScope::row ? positions : m.memory_slots * positions;
    return a.use_bottleneck ? std::min(m.bottleneck_size, budget) : budget;
}

// Patch queries [P x E] attend over memory slots [M x D]; returns [P x E].
Tensor readout_attention(const Tensor& queries, const Tensor& gamma, const ReadoutParams& p) {
    const std::size_t n = queries.dim(0), m = gamma.dim(0);
    const std::size_t heads = p.heads, d = p.wk.dim(1) / heads;
    auto split = [&](const Tensor& x, std::size_t rows) { return permute(reshape(x, {rows, heads, d}), {1, 0, 2}); };
    Tensor q = split(linear(queries, p.wq), n);  // [H x P x d]
    Tensor k = split(linear(gamma, p.wk), m);    // [H x M x d]
    Tensor v = split(linear(gamma, p.wv), m);
    Tensor attn = softmax(scale(bmm(q, transpose(k)), Scalar(1) / std::sqrt(static_cast<Scalar>(d))), 2);
    Tensor mixed = reshape(permute(bmm(attn, v), {1, 0, 2}), {n, heads * d});
    return linear(mixed, p.wo);
}

}  // namespace

AitModel::AitModel(const ModelConfig& model, const AblationConfig& ablation, const LossConfig& loss,
                   const ImageGeometry& geometry, std::size_t classes, std::uint64_t seed)
    : cfg_(model), ablation_(ablation), loss_(loss), geometry_(geometry), classes_(classes), seed_(seed) {
    if ((ablation.use_hopfield || ablation.use_bottleneck || ablation.reset_memory_each_epoch) && !ablation.use_memory) {
        throw ConfigError("use_hopfield, use_bottleneck and reset_memory_each_epoch need use_memory");
    }
    if (classes < 2) throw ConfigError("a classifier needs at least 2 classes, got " + std::to_string(classes));
    if (geometry.patch_size == 0 || geometry.height % geometry.patch_size || geometry.width % geometry.patch_size) {
        throw ShapeError("image " + std::to_string(geometry.height) + "x" + std::to_string(geometry.width) +
                         " is not divisible by patch size " + std::to_string(geometry.patch_size));
    }
    const std::size_t e = model.embed_dim, d = model.slot_dim;
    std::mt19937_64 rng(mix_seed(seed, kParamStream));

    embed_w_ = xavier(geometry.patch_values(), e, rng);
    pos_ = Tensor::randn({geometry.patches(), e}, rng, Scalar(0.02));
    for (std::size_t l = 0; l < model.layers; ++l) {
        TransformerBlockParams block;
        block.ln_attn = LayerNormParams::init(e);
        block.attn = AttentionParams::init(e, model.heads, rng);
        block.ln_ff = LayerNormParams::init(e);
        block.ff = FeedForwardParams::init(e, model.mlp_dim, rng);
        blocks_.push_back(std::move(block));
        if (ablation.use_memory) {
            WorkspaceBlock ws;
            ws.ln = LayerNormParams::init(e);
            ws.write = WorkspaceLayerParams::init(e, d, model.bottleneck_heads, model.bottleneck_size, rng);
            ws.write.topk_scope = model.topk_scope;
            ws.write.sigma = static_cast<Scalar>(loss.sigma);
            ws.write.epsilon = static_cast<Scalar>(loss.epsilon);
            ws.write.importance = loss.importance;
            if (ablation.use_hopfield) {
                ws.up = xavier(d, e, rng);
            } else {
                ws.readout.heads = model.bottleneck_heads;
                ws.readout.wq = xavier(e, model.bottleneck_heads * d, rng);
                ws.readout.wk = xavier(d, model.bottleneck_heads * d, rng);
                ws.readout.wv = xavier(d, model.bottleneck_heads * d, rng);
                ws.readout.wo = xavier(model.bottleneck_heads * d, e, rng);
            }
            workspace_.push_back(std::move(ws));
        }
    }
    final_ln_ = LayerNormParams::init(e);
    head_ = HeadParams::init(e, classes, rng);
    for (auto& [name, t] : named_parameters()) t.set_requires_grad();
    reset_memories();
}

void AitModel::reset_memories() {
    memories_.clear();
    if (!ablation_.use_memory) return;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        memories_.push_back(init_memory(cfg_.memory_init, cfg_.memory_slots, cfg_.slot_dim,
                                        mix_seed(seed_, kMemoryStream, l), static_cast<Scalar>(loss_.alpha)));
    }
}

std::size_t AitModel::effective_k(std::size_t positions) const { return workspace_k(cfg_, ablation_, positions); }

std::vector<std::pair<std::string, Tensor>> AitModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.w", embed_w_);
    out.emplace_back("embed.pos", pos_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const auto& b = blocks_[l];
        if (ablation_.use_sa) {
            out.emplace_back(p + "ln_attn.gain", b.ln_attn.gain);
            out.emplace_back(p + "ln_attn.bias", b.ln_attn.bias);
            out.emplace_back(p + "attn.wq", b.attn.wq);
            out.emplace_back(p + "attn.wk", b.attn.wk);
            out.emplace_back(p + "attn.wv", b.attn.wv);
            out.emplace_back(p + "attn.wo", b.attn.wo);
        }
        if (ablation_.use_ff) {
            out.emplace_back(p + "ln_ff.gain", b.ln_ff.gain);
            out.emplace_back(p + "ln_ff.bias", b.ln_ff.bias);
            out.emplace_back(p + "ff.w1", b.ff.w1);
            out.emplace_back(p + "ff.b1", b.ff.b1);
            out.emplace_back(p + "ff.w2", b.ff.w2);
            out.emplace_back(p + "ff.b2", b.ff.b2);
        }
        if (ablation_.use_memory) {
            const auto& ws = workspace_[l];
            out.emplace_back(p + "gwl.ln.gain", ws.ln.gain);
            out.emplace_back(p + "gwl.ln.bias", ws.ln.bias);
            out.emplace_back(p + "gwl.down", ws.write.down);
            out.emplace_back(p + "gwl.wq", ws.write.wq);
            out.emplace_back(p + "gwl.wk", ws.write.wk);
            out.emplace_back(p + "gwl.wv", ws.write.wv);
            out.emplace_back(p + "gwl.wo", ws.write.wo);
            out.emplace_back(p + "gwl.ln_out.gain", ws.write.ln_gain);
            out.emplace_back(p + "gwl.ln_out.bias", ws.write.ln_bias);
            if (ablation_.use_hopfield) {
                out.emplace_back(p + "gwl.up", ws.up);
            } else {
                out.emplace_back(p + "gwl.readout.wq", ws.readout.wq);
                out.emplace_back(p + "gwl.readout.wk", ws.readout.wk);
                out.emplace_back(p + "gwl.readout.wv", ws.readout.wv);
                out.emplace_back(p + "gwl.readout.wo", ws.readout.wo);
            }
        }
    }
    out.emplace_back("final_ln.gain", final_ln_.gain);
    out.emplace_back("final_ln.bias", final_ln_.bias);
    out.emplace_back("head.w", head_.w);
    out.emplace_back("head.b", head_.b);
    return out;
}

std::size_t AitModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

Tensor AitModel::workspace_layer(std::size_t layer, const Tensor& v, const ForwardOptions& options,
                                 LayerTrace& trace, Tensor& balance) {
    const auto& ws = workspace_[layer];
    ExplicitMemory& memory = memories_[layer];
    const std::size_t b = v.dim(0), n = v.dim(1);
    const bool pre = cfg_.norm_placement == NormPlacement::pre;

    Tensor xi = squash(pre ? layer_norm(v, ws.ln.gain, ws.ln.bias) : v);  // [(B*N) x E]

    WorkspaceLayerParams write = ws.write;
    write.k = effective_k(b * n);
    BottleneckResult written = bottleneck_attention(memory, xi, write);
    balance = add(balance, balance_loss(written.diagnostics, write.sigma, write.epsilon, write.importance));
    Tensor gamma_next = blend_memory(memory, written.gamma_hat, cfg_.norm_scope);

    Tensor xi_hat;
    if (ablation_.use_hopfield) {
        AttractorBank bank = build_attractors(gamma_next, ws.up, cfg_.beta, cfg_.hopfield_iters, cfg_.hopfield_tol);
        xi_hat = retrieve_batch(xi, bank, cfg_.hopfield_iters);
        if (options.energy_stats) {
            NoGradScope no_grad;
            const auto before = batch_energies(xi, bank);
            const auto after = batch_energies(xi_hat, bank);
            double drop = 0;
            for (std::size_t i = 0; i < before.size(); ++i) drop += before[i] - after[i];
            trace.energy_drop = drop / static_cast<double>(before.size());
        }
    } else {
        xi_hat = readout_attention(xi, gamma_next, ws.readout);
    }

    if (options.training) memory.gamma = gamma_next.detach();
    trace.bottleneck = std::move(written.diagnostics);

    Tensor out = add(unsquash(xi_hat, b, n), v);
    return pre ? out : layer_norm(out, ws.ln.gain, ws.ln.bias);
}

ForwardResult AitModel::forward(const Tensor& images, const ForwardOptions& options) {
    if (images.rank() != 4 || images.dim(1) != geometry_.height || images.dim(2) != geometry_.width ||
        images.dim(3) != geometry_.channels) {
        throw ShapeError("model expects [B x " + std::to_string(geometry_.height) + " x " +
                         std::to_string(geometry_.width) + " x " + std::to_string(geometry_.channels) +
                         "] images, got " + shape_str(images.shape()));
    }
    ForwardResult result;
    Tensor v = embed_patches(patchify_batch(images, geometry_.patch_size), embed_w_, pos_);
    Tensor balance = Tensor::scalar(0);
    std::size_t workspace_layers = 0;
    double ratio = 0, energy_drop = 0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        LayerTrace trace;
        Tensor* probs = options.keep_attention && ablation_.use_sa ? &trace.attention : nullptr;
        v = transformer_block(v, blocks_[l], cfg_.norm_placement, ablation_.use_sa, ablation_.use_ff, probs);
        if (ablation_.use_memory) {
            v = workspace_layer(l, v, options, trace, balance);
            ++workspace_layers;
            ratio += ablation_.use_bottleneck ? distinct_patch_ratio(*trace.bottleneck) : 1.0;
            energy_drop += trace.energy_drop;
        }
        result.layers.push_back(std::move(trace));
    }
    if (workspace_layers) {
        result.distinct_patch_ratio = ratio / static_cast<double>(workspace_layers);
        result.mean_energy_drop = energy_drop / static_cast<double>(workspace_layers);
        if (loss_.layer_reduction == LayerReduction::mean) {
            balance = scale(balance, Scalar(1) / static_cast<Scalar>(workspace_layers));
        }
    }
    result.balance_loss = balance;
    v = layer_norm(v, final_ln_.gain, final_ln_.bias);
    result.logits = pooled_head(v, head_);
    return result;
}

std::size_t analytic_parameter_count(const ModelConfig& m, const AblationConfig& a, const ImageGeometry& g,
                                     std::size_t classes) {
    const std::size_t e = m.embed_dim, d = m.slot_dim, h = m.bottleneck_heads;
    std::size_t per_layer = 0;
    if (a.use_sa) per_layer += 2 * e + 4 * e * e;
    if (a.use_ff) per_layer += 2 * e + e * m.mlp_dim + m.mlp_dim + m.mlp_dim * e + e;
    if (a.use_memory) {
        per_layer += 2 * e + e * d + 3 * d * h * d + h * d * d + 2 * d;
        per_layer += a.use_hopfield ? d * e : e * h * d + 2 * d * h * d + h * d * e;
    }
    return g.patch_values() * e + g.patches() * e + m.layers * per_layer + 2 * e + e * classes + classes;
}

}  // namespace ait
