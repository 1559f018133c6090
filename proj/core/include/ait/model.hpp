#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ait/config.hpp"
#include "ait/tensor.hpp"
#include "ait/vit.hpp"
#include "ait/workspace.hpp"

namespace ait {

/// Input geometry the model is built for.
struct ImageGeometry {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    std::size_t patch_size = 4;

    std::size_t grid_rows() const { return height / patch_size; }
    std::size_t grid_cols() const { return width / patch_size; }
    std::size_t patches() const { return grid_rows() * grid_cols(); }
    std::size_t patch_values() const { return patch_size * patch_size * channels; }
};

/// Cross-attention readout used when the Hopfield retrieval is ablated:
/// patch queries attend over the blended memory slots.
struct ReadoutParams {
    Tensor wq;  // [E x heads*D]
    Tensor wk;  // [D x heads*D]
    Tensor wv;  // [D x heads*D]
    Tensor wo;  // [heads*D x E]
    std::size_t heads = 1;
};

/// Learnable parts of one global workspace layer.
struct WorkspaceBlock {
    LayerNormParams ln;
    WorkspaceLayerParams write;
    Tensor up;  // [D x E], Hopfield attractor projection
    ReadoutParams readout;
};

struct ForwardOptions {
    /// Training mode commits the blended memory after the pass.
    bool training = false;
    /// Keep [B x A x N x N] self-attention scores per layer.
    bool keep_attention = false;
    /// Evaluate Hopfield energies before/after retrieval.
    bool energy_stats = false;
};

struct LayerTrace {
    std::optional<BottleneckDiagnostics> bottleneck;
    Tensor attention;  // set when keep_attention and self-attention is on
    double energy_drop = 0;
};

struct ForwardResult {
    Tensor logits;        // [B x classes]
    Tensor balance_loss;  // scalar; zero when there is no workspace
    std::vector<LayerTrace> layers;
    /// Averaged over workspace layers; 1.0 without a bottleneck.
    double distinct_patch_ratio = 1.0;
    double mean_energy_drop = 0;
};

class AitModel {
   public:
    AitModel(const ModelConfig& model, const AblationConfig& ablation, const LossConfig& loss,
             const ImageGeometry& geometry, std::size_t classes, std::uint64_t seed);

    /// images: [B x H x W x C]. Records on the active tape, if any.
    ForwardResult forward(const Tensor& images, const ForwardOptions& options = {});

    /// Stable, ordered parameter list; names key the checkpoint entries.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t parameter_count() const;

    std::vector<ExplicitMemory>& memories() { return memories_; }
    const std::vector<ExplicitMemory>& memories() const { return memories_; }
    /// Re-runs the configured memory initialization for every layer.
    void reset_memories();

    const ImageGeometry& geometry() const { return geometry_; }
    std::size_t classes() const { return classes_; }
    std::size_t layers() const { return blocks_.size(); }
    bool has_workspace() const { return ablation_.use_memory; }
    /// Effective top-k budget for a pass over `positions` squashed patches.
    std::size_t effective_k(std::size_t positions) const;

   private:
    Tensor workspace_layer(std::size_t layer, const Tensor& v, const ForwardOptions& options, LayerTrace& trace,
                           Tensor& balance);

    ModelConfig cfg_;
    AblationConfig ablation_;
    LossConfig loss_;
    ImageGeometry geometry_;
    std::size_t classes_;
    std::uint64_t seed_;

    Tensor embed_w_;
    Tensor pos_;
    std::vector<TransformerBlockParams> blocks_;
    std::vector<WorkspaceBlock> workspace_;
    std::vector<ExplicitMemory> memories_;
    LayerNormParams final_ln_;
    HeadParams head_;
};

/// Trainable parameter count implied by a configuration, computed from the
/// layer shapes alone.
std::size_t analytic_parameter_count(const ModelConfig& model, const AblationConfig& ablation,
                                     const ImageGeometry& geometry, std::size_t classes);

}  // namespace ait
