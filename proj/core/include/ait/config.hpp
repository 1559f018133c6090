#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ait/tensor.hpp"
#include "ait/vit.hpp"
#include "ait/workspace.hpp"

namespace ait {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t embed_dim = 768;
    std::size_t heads = 12;
    std::size_t mlp_dim = 3072;
    std::size_t memory_slots = 32;
    std::size_t slot_dim = 32;
    std::size_t bottleneck_heads = 8;
    std::size_t bottleneck_size = 512;
    Scalar beta = 1;
    MemoryInit memory_init = MemoryInit::gaussian;
    NormScope norm_scope = NormScope::memory;
    TopkScope topk_scope = TopkScope::row;
    std::size_t hopfield_iters = 1;
    double hopfield_tol = 1e-4;
    NormPlacement norm_placement = NormPlacement::pre;
    /// 0 = take the class count from the training data.
    std::size_t classes = 0;
};

struct AblationConfig {
    bool use_memory = true;
    bool use_hopfield = true;
    bool use_bottleneck = true;
    bool use_sa = true;
    bool use_ff = true;
    bool reset_memory_each_epoch = false;
};

struct OptimizerConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class LayerReduction { sum, mean };

struct ScheduleConfig {
    bool cosine = true;
    std::size_t warmup_epochs = 5;
    std::size_t epochs = 100;
    double min_lr = 1e-6;
    double warmup_start_lr = 1e-6;
};

struct LossConfig {
    double sigma = 1e-2;
    double epsilon = 1e-10;
    double alpha = 0.9;
    LayerReduction layer_reduction = LayerReduction::sum;
    ImportanceSource importance = ImportanceSource::post_mask;
};

struct DataConfig {
    /// AITDATA1 files; when train_path is empty the generator is used.
    std::string train_path;
    std::string test_path;
    std::string generator = "triangle";  // triangle | two-blob
    std::size_t train_count = 5000;
    std::size_t test_count = 1000;
    std::size_t side = 32;
    std::uint64_t data_seed = 1;
    std::size_t batch_size = 512;
    std::size_t patch_size = 4;
    bool hflip = false;
    bool normalize = false;
    double mean = 0;
    double stddev = 1;
};

struct OutputConfig {
    std::string dir = "runs/ait";
    std::string metrics = "metrics.csv";
    /// 0 = run the full schedule.
    std::size_t max_steps = 0;
    bool checkpoint_each_epoch = true;
};

/// Complete experiment description. Every field has a flat dotted key
/// ("model.embed_dim", "optimizer.lr", ...) in the text form.
struct TrainConfig {
    ModelConfig model;
    AblationConfig ablation;
    OptimizerConfig optimizer;
    ScheduleConfig schedule;
    LossConfig loss;
    DataConfig data;
    OutputConfig output;
    std::uint64_t seed = 0;

    /// Throws ConfigError on contradictory or out-of-range settings.
    void validate() const;
};

/// Applies one "key = value" assignment.
void apply_override(TrainConfig& cfg, std::string_view key, std::string_view value);
/// Parses "key=value" (used by --override).
void apply_override(TrainConfig& cfg, std::string_view assignment);

/// Flat text form: one "key = value" per line; '#' starts a comment.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
std::string to_text(const TrainConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace ait
