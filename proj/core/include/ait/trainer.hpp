#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ait/checkpoint.hpp"
#include "ait/config.hpp"
#include "ait/data.hpp"
#include "ait/model.hpp"
#include "ait/optimizer.hpp"

namespace ait {

struct MetricsRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0;
    double task_loss = 0;
    double bottleneck_loss = 0;
    double accuracy = 0;
    double lr = 0;
    double distinct_patch_ratio = 1;
    double mean_energy_drop = 0;
};

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

/// Train and test sets for a config: loaded from AITDATA1 files when
/// data.train is set, otherwise generated.
struct DataSplits {
    LabeledImageSet train;
    std::optional<LabeledImageSet> test;
};
DataSplits load_splits(const TrainConfig& cfg);

ImageGeometry geometry_for(const LabeledImageSet& set, std::size_t patch_size);
AugmentFlags augment_flags(const DataConfig& cfg, bool training);

/// Model, optimizer and position in the schedule.
class Trainer {
   public:
    Trainer(const TrainConfig& cfg, const LabeledImageSet& train);
    /// Restores a saved run; `train` must be the set it was trained on.
    static Trainer resume(const std::filesystem::path& checkpoint, const LabeledImageSet& train);

    /// One optimizer step on the next batch of the schedule.
    MetricsRow step();
    /// Steps until the schedule ends or `max_steps` (0 = no cap) is reached,
    /// appending metrics and writing checkpoints as configured.
    std::vector<MetricsRow> run(std::size_t max_steps = 0);

    bool finished() const { return step_ >= schedule_.total_steps(); }
    std::size_t current_step() const { return step_; }
    std::size_t steps_per_epoch() const { return steps_per_epoch_; }

    Archive snapshot() const;
    void save(const std::filesystem::path& path);
    const std::filesystem::path& last_checkpoint() const { return last_checkpoint_; }

    AitModel& model() { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    std::filesystem::path metrics_path() const;

   private:
    void restore(const Archive& archive);
    void open_metrics(bool fresh);

    TrainConfig cfg_;
    const LabeledImageSet* train_;
    std::unique_ptr<AitModel> model_;
    std::unique_ptr<AdamW> optimizer_;
    std::size_t steps_per_epoch_;
    LrSchedule schedule_;
    std::size_t step_ = 0;
    std::optional<BatchStream> stream_;
    std::size_t stream_epoch_ = 0;
    std::filesystem::path last_checkpoint_;
};

/// Runs train() end to end from a config: data, metrics CSV, checkpoints.
/// Returns the final test accuracy when a test split exists.
struct TrainSummary {
    std::vector<MetricsRow> rows;
    std::optional<double> test_accuracy;
    std::filesystem::path checkpoint;
};
TrainSummary train(const TrainConfig& cfg);

struct EvalReport {
    double accuracy = 0;
    std::size_t count = 0;
    std::vector<std::size_t> per_class_total;
    std::vector<std::size_t> per_class_correct;
};

/// Memory is left untouched; deterministic for a fixed model and set.
EvalReport evaluate(AitModel& model, const LabeledImageSet& set, std::size_t batch_size, const AugmentFlags& flags);

/// A model rebuilt from a checkpoint, with the config it was trained under.
struct LoadedModel {
    TrainConfig config;
    std::unique_ptr<AitModel> model;
    std::size_t step = 0;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);
/// Throws ShapeError when the set does not match the model's input geometry.
void check_compatible(const AitModel& model, const LabeledImageSet& set);

}  // namespace ait
