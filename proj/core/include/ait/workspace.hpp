#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ait/tensor.hpp"

namespace ait {

/// How the EWMA-blended memory is rescaled after each update.
enum class NormScope {
    memory,  ///< whole M x D bank has unit Frobenius norm
    slot,    ///< every slot row has unit norm
};

/// Where the bottleneck budget k applies.
enum class TopkScope {
    row,   ///< k patches per memory-slot row
    head,  ///< k entries over the whole M x (B*N) matrix of a head
};

enum class MemoryInit { gaussian, positional, uniform, identity };

/// Which attention scores the balance loss sums into per-position importance.
enum class ImportanceSource {
    post_mask,  ///< the scores that survive the top-k mask
    pre_mask,   ///< the full softmax rows
};

MemoryInit parse_memory_init(std::string_view name);
std::string_view to_string(MemoryInit init);
NormScope parse_norm_scope(std::string_view name);
std::string_view to_string(NormScope scope);
TopkScope parse_topk_scope(std::string_view name);
std::string_view to_string(TopkScope scope);
ImportanceSource parse_importance_source(std::string_view name);
std::string_view to_string(ImportanceSource source);

/// The low-rank prior bank gamma[M x D] and its smoothing factor.
struct ExplicitMemory {
    Tensor gamma;
    Scalar alpha = Scalar(0.9);

    std::size_t slots() const { return gamma.dim(0); }
    std::size_t slot_dim() const { return gamma.dim(1); }
    /// Bytes held by the bank; independent of the embedding width.
    std::size_t footprint_bytes() const { return gamma.numel() * sizeof(Scalar); }
};

ExplicitMemory init_memory(MemoryInit method, std::size_t slots, std::size_t slot_dim, std::uint64_t seed,
                           Scalar alpha = Scalar(0.9));

/// Learnable maps of one global workspace layer's write path.
///
/// Every bottleneck head has its own D x D query/key/value maps; their outputs
/// are concatenated ([M x heads*D]) and mapped back to D by wo.
struct WorkspaceLayerParams {
    Tensor down;     // [E x D]
    Tensor wq;       // [D x heads*D]
    Tensor wk;       // [D x heads*D]
    Tensor wv;       // [D x heads*D]
    Tensor wo;       // [heads*D x D]
    Tensor ln_gain;  // [D]
    Tensor ln_bias;  // [D]
    std::size_t heads = 1;
    std::size_t k = 1;
    Scalar sigma = Scalar(1e-2);
    Scalar epsilon = Scalar(1e-10);
    TopkScope topk_scope = TopkScope::row;
    ImportanceSource importance = ImportanceSource::post_mask;

    std::size_t slot_dim() const { return down.dim(1); }
    static WorkspaceLayerParams init(std::size_t embed_dim, std::size_t slot_dim, std::size_t heads, std::size_t k,
                                     std::mt19937_64& rng);
};

/// Attention snapshots from one bottleneck pass, stacked over heads.
struct BottleneckDiagnostics {
    Tensor scores;  ///< pre-mask softmax scores [heads x M x B*N]
    Tensor masked;  ///< post-mask scores [heads x M x B*N], on the tape when recording
    std::vector<unsigned char> selected;  ///< top-k mask, same layout as `masked`
    std::size_t k = 0;
    TopkScope topk_scope = TopkScope::row;

    std::size_t heads() const { return scores.dim(0); }
    std::size_t slots() const { return scores.dim(1); }
    std::size_t positions() const { return scores.dim(2); }

    /// Pre-mask scores of one head as an [M x B*N] copy.
    Tensor head_scores(std::size_t head) const;
    /// Sum over slots of the post-mask scores, per head and position.
    std::vector<std::vector<double>> importance() const;
    /// Number of slots that selected each position, per head.
    std::vector<std::vector<std::uint32_t>> loads() const;
};

/// Applies the bottleneck mask to pre-mask scores [heads x M x B*N] and
/// records the selection.
BottleneckDiagnostics make_diagnostics(const Tensor& scores, std::size_t k, TopkScope scope);

/// [B x N x E] -> [(B*N) x E], sample-major.
Tensor squash(const Tensor& v);
Tensor unsquash(const Tensor& squashed, std::size_t batch, std::size_t patches);

struct BottleneckResult {
    Tensor gamma_hat;  // [M x D]
    BottleneckDiagnostics diagnostics;
};

/// Cross-attention from memory-slot queries to the down-projected squashed
/// patches, hard top-k selection, per-head value mixing, W^O and layer norm.
BottleneckResult bottleneck_attention(const ExplicitMemory& memory, const Tensor& squashed,
                                      const WorkspaceLayerParams& params);

/// (1 - alpha) * gamma + alpha * gamma_hat, rescaled per `scope`. The stored
/// gamma enters as a constant; gradients reach gamma_hat only.
Tensor blend_memory(const ExplicitMemory& memory, const Tensor& gamma_hat, NormScope scope = NormScope::memory);

/// Committed form of blend_memory: a new bank holding the detached result.
ExplicitMemory update_memory(const ExplicitMemory& memory, const Tensor& gamma_hat,
                             NormScope scope = NormScope::memory);

/// sigma * sum over heads of CV^2(importance) + CV^2(loads); population
/// variances, epsilon added to the squared mean. Only importance carries
/// gradient.
Tensor balance_loss(const BottleneckDiagnostics& diag, Scalar sigma, Scalar epsilon,
                    ImportanceSource importance = ImportanceSource::post_mask);

/// Distinct selected positions / total selections counted with multiplicity.
double distinct_patch_ratio(const BottleneckDiagnostics& diag);

/// Writes one binary graymap (P5) of a rows x cols grid, scaled so the
/// largest value maps to 255.
void write_pgm(const std::filesystem::path& path, std::span<const Scalar> values, std::size_t rows,
               std::size_t cols);

}  // namespace ait
