#include "ait/workspace.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "ait/error.hpp"
#include "ait/ops.hpp"
#include "ait/vit.hpp"

namespace ait {

MemoryInit parse_memory_init(std::string_view name) {
    if (name == "gaussian") return MemoryInit::gaussian;
    if (name == "positional") return MemoryInit::positional;
    if (name == "uniform") return MemoryInit::uniform;
    if (name == "identity") return MemoryInit::identity;
    throw ConfigError("unknown memory init '" + std::string(name) + "' (gaussian|positional|uniform|identity)");
}

std::string_view to_string(MemoryInit init) {
    switch (init) {
        case MemoryInit::gaussian: return "gaussian";
        case MemoryInit::positional: return "positional";
        case MemoryInit::uniform: return "uniform";
        case MemoryInit::identity: return "identity";
    }
    return "gaussian";
}

NormScope parse_norm_scope(std::string_view name) {
    if (name == "memory") return NormScope::memory;
    if (name == "slot") return NormScope::slot;
    throw ConfigError("unknown norm scope '" + std::string(name) + "' (memory|slot)");
}

std::string_view to_string(NormScope scope) { return scope == NormScope::memory ? "memory" : "slot"; }

TopkScope parse_topk_scope(std::string_view name) {
    if (name == "row") return TopkScope::row;
    if (name == "head") return TopkScope::head;
    throw ConfigError("unknown top-k scope '" + std::string(name) + "' (row|head)");
}

std::string_view to_string(TopkScope scope) { return scope == TopkScope::row ? "row" : "head"; }

ImportanceSource parse_importance_source(std::string_view name) {
    if (name == "post") return ImportanceSource::post_mask;
    if (name == "pre") return ImportanceSource::pre_mask;
    throw ConfigError("unknown importance source '" + std::string(name) + "' (post|pre)");
}

std::string_view to_string(ImportanceSource source) {
    return source == ImportanceSource::post_mask ? "post" : "pre";
}

ExplicitMemory init_memory(MemoryInit method, std::size_t slots, std::size_t slot_dim, std::uint64_t seed,
                           Scalar alpha) {
    if (slots == 0 || slot_dim == 0) throw ConfigError("memory needs at least one slot of width >= 1");
    if (!(alpha > 0 && alpha < 1)) throw ConfigError("EWMA alpha must lie in (0, 1), got " + std::to_string(alpha));
    std::mt19937_64 rng(seed);
    ExplicitMemory mem;
    mem.alpha = alpha;
    switch (method) {
        case MemoryInit::gaussian:
            mem.gamma = Tensor::randn({slots, slot_dim}, rng, Scalar(1));
            break;
        case MemoryInit::uniform: {
            const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(slots + slot_dim));
            mem.gamma = Tensor::uniform({slots, slot_dim}, rng, -bound, bound);
            break;
        }
        case MemoryInit::identity:
            mem.gamma = Tensor({slots, slot_dim});
            for (std::size_t i = 0; i < std::min(slots, slot_dim); ++i) mem.gamma[i * slot_dim + i] = 1;
            break;
        case MemoryInit::positional:
            mem.gamma = Tensor({slots, slot_dim});
            for (std::size_t pos = 0; pos < slots; ++pos)
                for (std::size_t d = 0; d < slot_dim; ++d) {
                    const double freq =
                        std::pow(10000.0, -static_cast<double>(2 * (d / 2)) / static_cast<double>(slot_dim));
                    const double angle = static_cast<double>(pos) * freq;
                    mem.gamma[pos * slot_dim + d] = static_cast<Scalar>(d % 2 == 0 ? std::sin(angle) : std::cos(angle));
                }
            break;
    }
    return mem;
}

WorkspaceLayerParams WorkspaceLayerParams::init(std::size_t embed_dim, std::size_t slot_dim, std::size_t heads,
                                                std::size_t k, std::mt19937_64& rng) {
    if (heads == 0) throw ConfigError("bottleneck needs at least one head");
    if (k == 0) throw ConfigError("bottleneck size k must be >= 1");
    WorkspaceLayerParams p;
    p.heads = heads;
    p.k = k;
    p.down = xavier(embed_dim, slot_dim, rng);
    p.wq = xavier(slot_dim, heads * slot_dim, rng);
    p.wk = xavier(slot_dim, heads * slot_dim, rng);
    p.wv = xavier(slot_dim, heads * slot_dim, rng);
    p.wo = xavier(heads * slot_dim, slot_dim, rng);
    p.ln_gain = Tensor({slot_dim}, Scalar(1));
    p.ln_bias = Tensor({slot_dim});
    return p;
}

Tensor BottleneckDiagnostics::head_scores(std::size_t head) const {
    const std::size_t m = slots(), n = positions();
    std::vector<Scalar> values(scores.data().begin() + static_cast<std::ptrdiff_t>(head * m * n),
                               scores.data().begin() + static_cast<std::ptrdiff_t>((head + 1) * m * n));
    return Tensor({m, n}, std::move(values));
}

std::vector<std::vector<double>> BottleneckDiagnostics::importance() const {
    const std::size_t h = heads(), m = slots(), n = positions();
    std::vector<std::vector<double>> out(h, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t l = 0; l < n; ++l) out[i][l] += masked[(i * m + j) * n + l];
    return out;
}

std::vector<std::vector<std::uint32_t>> BottleneckDiagnostics::loads() const {
    const std::size_t h = heads(), m = slots(), n = positions();
    std::vector<std::vector<std::uint32_t>> out(h, std::vector<std::uint32_t>(n, 0));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t l = 0; l < n; ++l) out[i][l] += selected[(i * m + j) * n + l];
    return out;
}

BottleneckDiagnostics make_diagnostics(const Tensor& scores, std::size_t k, TopkScope scope) {
    if (scores.rank() != 3) throw ShapeError("bottleneck scores must be [heads x M x B*N], got " + shape_str(scores.shape()));
    const std::size_t h = scores.dim(0), m = scores.dim(1), n = scores.dim(2);
    const std::size_t budget = scope == TopkScope::row ? n : m * n;
    if (k > budget) {
        throw CapacityError("bottleneck size k = " + std::to_string(k) + " exceeds the " + std::to_string(budget) +
                            " candidate entries (B*N = " + std::to_string(n) + ")");
    }
    BottleneckDiagnostics diag;
    diag.scores = scores;
    diag.k = k;
    diag.topk_scope = scope;
    if (scope == TopkScope::row) {
        diag.selected = top_k_selection(scores, k);
        diag.masked = top_k_mask(scores, k);
    } else {
        Tensor flat = reshape(scores, {h, m * n});
        diag.selected = top_k_selection(flat, k);
        diag.masked = reshape(top_k_mask(flat, k), {h, m, n});
    }
    return diag;
}

Tensor squash(const Tensor& v) {
    if (v.rank() != 3) throw ShapeError("squash expects [B x N x E], got " + shape_str(v.shape()));
    return reshape(v, {v.dim(0) * v.dim(1), v.dim(2)});
}

Tensor unsquash(const Tensor& squashed, std::size_t batch, std::size_t patches) {
    if (squashed.rank() != 2 || squashed.dim(0) != batch * patches) {
        throw ShapeError("unsquash: " + shape_str(squashed.shape()) + " is not " + std::to_string(batch) + "x" +
                         std::to_string(patches) + " patches");
    }
    return reshape(squashed, {batch, patches, squashed.dim(1)});
}

BottleneckResult bottleneck_attention(const ExplicitMemory& memory, const Tensor& squashed,
                                      const WorkspaceLayerParams& params) {
    if (squashed.rank() != 2) throw ShapeError("bottleneck expects squashed [(B*N) x E], got " + shape_str(squashed.shape()));
    const std::size_t d = params.slot_dim(), heads = params.heads;
    const std::size_t m = memory.slots(), n = squashed.dim(0);
    if (memory.slot_dim() != d) {
        throw ShapeError("memory " + shape_str(memory.gamma.shape()) + " does not match slot width " + std::to_string(d));
    }
    if (params.topk_scope == TopkScope::row && params.k > n) {
        throw CapacityError("bottleneck size k = " + std::to_string(params.k) + " exceeds B*N = " + std::to_string(n));
    }
    Tensor low = linear(squashed, params.down);  // [n x D]
    auto per_head = [&](const Tensor& x, std::size_t rows) { return permute(reshape(x, {rows, heads, d}), {1, 0, 2}); };
    Tensor q = per_head(linear(memory.gamma, params.wq), m);  // [H x M x D]
    Tensor k = per_head(linear(low, params.wk), n);           // [H x n x D]
    Tensor v = per_head(linear(low, params.wv), n);           // [H x n x D]
    Tensor scores = softmax(scale(bmm(q, transpose(k)), Scalar(1) / std::sqrt(static_cast<Scalar>(d))), 2);

    BottleneckResult result;
    result.diagnostics = make_diagnostics(scores, params.k, params.topk_scope);
    Tensor mixed = bmm(result.diagnostics.masked, v);  // [H x M x D]
    Tensor joined = reshape(permute(mixed, {1, 0, 2}), {m, heads * d});
    result.gamma_hat = layer_norm(linear(joined, params.wo), params.ln_gain, params.ln_bias);
    return result;
}

Tensor blend_memory(const ExplicitMemory& memory, const Tensor& gamma_hat, NormScope scope) {
    if (gamma_hat.shape() != memory.gamma.shape()) {
        throw ShapeError("gamma_hat " + shape_str(gamma_hat.shape()) + " does not match memory " +
                         shape_str(memory.gamma.shape()));
    }
    Tensor previous = memory.gamma.detach();
    Tensor blended = add(scale(previous, Scalar(1) - memory.alpha), scale(gamma_hat, memory.alpha));
    Tensor sq = square(blended);
    Tensor norm = scope == NormScope::memory ? sqrt(sum_all(sq)) : sqrt(sum(sq, 1, true));
    return div(blended, norm);
}

ExplicitMemory update_memory(const ExplicitMemory& memory, const Tensor& gamma_hat, NormScope scope) {
    ExplicitMemory next;
    {
        NoGradScope no_grad;
        next.gamma = blend_memory(memory, gamma_hat, scope).detach();
    }
    next.alpha = memory.alpha;
    return next;
}

Tensor balance_loss(const BottleneckDiagnostics& diag, Scalar sigma, Scalar epsilon, ImportanceSource source) {
    if (sigma < 0) throw ParameterError("balance loss coefficient must be >= 0");
    if (!(epsilon > 0)) throw ParameterError("balance loss epsilon must be > 0");
    // importance is the differentiable half
    Tensor importance = sum(source == ImportanceSource::pre_mask ? diag.scores : diag.masked, 1);  // [H x n]
    Tensor mu = mean(importance, 1);
    Tensor importance_cv = div(variance(importance, 1), add_scalar(square(mu), epsilon));
    // loads: piecewise constant, enters as a constant
    double loads_cv = 0;
    for (const auto& row : diag.loads()) {
        double m = 0;
        for (auto v : row) m += v;
        m /= static_cast<double>(row.size());
        double var = 0;
        for (auto v : row) var += (v - m) * (v - m);
        var /= static_cast<double>(row.size());
        loads_cv += var / (m * m + static_cast<double>(epsilon));
    }
    Tensor total = add_scalar(sum_all(importance_cv), static_cast<Scalar>(loads_cv));
    return scale(total, sigma);
}

double distinct_patch_ratio(const BottleneckDiagnostics& diag) {
    const std::size_t h = diag.heads(), m = diag.slots(), n = diag.positions();
    std::vector<unsigned char> hit(n, 0);
    std::size_t total = 0;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t l = 0; l < n; ++l)
                if (diag.selected[(i * m + j) * n + l]) {
                    hit[l] = 1;
                    ++total;
                }
    if (total == 0) return 1.0;
    std::size_t distinct = 0;
    for (auto x : hit) distinct += x;
    return static_cast<double>(distinct) / static_cast<double>(total);
}

void write_pgm(const std::filesystem::path& path, std::span<const Scalar> values, std::size_t rows,
               std::size_t cols) {
    if (values.size() != rows * cols) {
        throw ShapeError("graymap needs " + std::to_string(rows * cols) + " values, got " + std::to_string(values.size()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    Scalar top = 0;
    for (auto v : values) top = std::max(top, v);
    out << "P5\n" << cols << ' ' << rows << "\n255\n";
    for (auto v : values) {
        const double level = top > 0 ? std::clamp(static_cast<double>(v / top), 0.0, 1.0) * 255.0 : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(level))));
    }
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace ait
