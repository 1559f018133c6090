#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ait/data.hpp"
#include "ait/model.hpp"

namespace ait {

/// Smallest s such that the s largest entries of `row` sum to at least
/// `threshold`; the full row length if they never do.
std::size_t sparsity_count(std::span<const Scalar> row, double threshold);

struct SparsityRecord {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t sample = 0;
    std::size_t query = 0;
    std::size_t s = 0;
};

struct SparsityReport {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t patches = 0;
    double threshold = 0.9;
    std::vector<SparsityRecord> records;
    /// [layer][head]: per-sample median s averaged over samples.
    std::vector<std::vector<double>> mean_median;
};

/// Per-head sparsity table from self-attention scores [B x A x N x N] of
/// each layer; samples are numbered from `first_sample`.
void accumulate_sparsity(SparsityReport& report, const std::vector<Tensor>& layer_scores, std::size_t first_sample);
void finish_sparsity(SparsityReport& report);

/// Runs eval-mode forwards over the set and tabulates every layer and head.
SparsityReport analyze_sparsity(AitModel& model, const LabeledImageSet& set, double threshold,
                                std::size_t batch_size, const AugmentFlags& flags);
/// Long-format CSV: layer,head,sample,query,s.
void write_sparsity_csv(const std::filesystem::path& path, const SparsityReport& report);

struct MemoryInspection {
    std::size_t images = 0;
    std::vector<std::filesystem::path> heatmaps;
    std::filesystem::path csv;
};

/// Renders each slot's pre-mask bottleneck attention over the patch grid of
/// the first `images` samples (one eval-mode forward) as PGM files, plus
/// scores.csv with columns layer,head,slot,sample,patch,score.
MemoryInspection inspect_memory(AitModel& model, const LabeledImageSet& set, const std::filesystem::path& out_dir,
                                std::size_t images, const AugmentFlags& flags);

}  // namespace ait
