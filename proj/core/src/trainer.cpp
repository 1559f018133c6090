#include "ait/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ait/error.hpp"
#include "ait/ops.hpp"

namespace ait {

namespace {

constexpr std::uint64_t kTestDataStream = 0x7e57;

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (logits[row * c + j] > logits[row * c + best]) best = j;
    return best;
}

std::size_t class_count(const TrainConfig& cfg, const LabeledImageSet& train) {
    return cfg.model.classes ? cfg.model.classes : train.class_count;
}

LabeledImageSet generate(const DataConfig& d, std::size_t count, std::uint64_t seed) {
    if (d.generator == "triangle") return gen_triangle(count, d.side, seed);
    if (d.generator == "two-blob") return gen_two_blob(count, d.side, seed);
    throw ConfigError("unknown data.generator '" + d.generator + "'");
}

}  // namespace

std::string metrics_header() {
    return "epoch,step,loss,task_loss,bottleneck_loss,accuracy,lr,distinct_patch_ratio,mean_energy_drop";
}

std::string format_metrics(const MetricsRow& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.step, r.loss, r.task_loss,
                  r.bottleneck_loss, r.accuracy, r.lr, r.distinct_patch_ratio, r.mean_energy_drop);
    return buf;
}

DataSplits load_splits(const TrainConfig& cfg) {
    DataSplits s;
    const auto& d = cfg.data;
    if (!d.train_path.empty()) {
        s.train = load_dataset(d.train_path, Split::train);
        if (!d.test_path.empty()) s.test = load_dataset(d.test_path, Split::test);
    } else {
        s.train = generate(d, d.train_count, d.data_seed);
        if (d.test_count > 0) {
            s.test = generate(d, d.test_count, mix_seed(d.data_seed, kTestDataStream));
            s.test->split = Split::test;
        }
    }
    if (s.train.count == 0) throw FormatError("training set is empty");
    return s;
}

ImageGeometry geometry_for(const LabeledImageSet& set, std::size_t patch_size) {
    return {set.height, set.width, set.channels, patch_size};
}

AugmentFlags augment_flags(const DataConfig& d, bool training) {
    AugmentFlags f;
    f.shuffle = training;
    f.hflip = training && d.hflip;
    f.normalize = d.normalize;
    f.mean = static_cast<Scalar>(d.mean);
    f.stddev = static_cast<Scalar>(d.stddev);
    return f;
}

Trainer::Trainer(const TrainConfig& cfg, const LabeledImageSet& train)
    : cfg_(cfg),
      train_(&train),
      steps_per_epoch_((train.count + cfg.data.batch_size - 1) / std::max<std::size_t>(cfg.data.batch_size, 1)),
      schedule_(cfg.optimizer.lr, cfg.schedule, std::max<std::size_t>(steps_per_epoch_, 1)) {
    cfg_.validate();
    if (train.count == 0) throw FormatError("training set is empty");
    model_ = std::make_unique<AitModel>(cfg.model, cfg.ablation, cfg.loss, geometry_for(train, cfg.data.patch_size),
                                        class_count(cfg, train), cfg.seed);
    optimizer_ = std::make_unique<AdamW>(model_->named_parameters(), cfg.optimizer);
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const LabeledImageSet& train) {
    Archive archive = load_archive(checkpoint);
    Trainer t(parse_config(archive.text("config")), train);
    t.restore(archive);
    t.last_checkpoint_ = checkpoint;
    return t;
}

std::filesystem::path Trainer::metrics_path() const {
    return std::filesystem::path(cfg_.output.dir) / cfg_.output.metrics;
}

Archive Trainer::snapshot() const {
    Archive a;
    a.add_text("config", to_text(cfg_));
    a.add_u64("meta.step", step_);
    const auto& g = model_->geometry();
    a.add_u64("meta.height", g.height);
    a.add_u64("meta.width", g.width);
    a.add_u64("meta.channels", g.channels);
    a.add_u64("meta.classes", model_->classes());
    for (const auto& [name, t] : model_->named_parameters()) a.add_tensor("param." + name, t);
    for (std::size_t l = 0; l < model_->memories().size(); ++l) {
        a.add_tensor("memory.layer" + std::to_string(l), model_->memories()[l].gamma);
    }
    const auto& params = optimizer_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        a.add_tensor("adam.m." + params[i].first, optimizer_->first_moments()[i]);
        a.add_tensor("adam.v." + params[i].first, optimizer_->second_moments()[i]);
    }
    a.add_u64("adam.steps", optimizer_->steps());
    return a;
}

void Trainer::restore(const Archive& a) {
    const auto& g = model_->geometry();
    if (a.u64("meta.height") != g.height || a.u64("meta.width") != g.width || a.u64("meta.channels") != g.channels) {
        throw ShapeError("checkpoint was trained on " + std::to_string(a.u64("meta.height")) + "x" +
                         std::to_string(a.u64("meta.width")) + "x" + std::to_string(a.u64("meta.channels")) +
                         " images, data is " + std::to_string(g.height) + "x" + std::to_string(g.width) + "x" +
                         std::to_string(g.channels));
    }
    for (auto& [name, t] : model_->named_parameters()) a.load_into("param." + name, t);
    for (std::size_t l = 0; l < model_->memories().size(); ++l) {
        a.load_into("memory.layer" + std::to_string(l), model_->memories()[l].gamma);
    }
    const auto& params = optimizer_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        a.load_into("adam.m." + params[i].first, optimizer_->first_moments()[i]);
        a.load_into("adam.v." + params[i].first, optimizer_->second_moments()[i]);
    }
    optimizer_->set_steps(a.u64("adam.steps"));
    step_ = a.u64("meta.step");
    stream_.reset();
}

void Trainer::save(const std::filesystem::path& path) {
    save_archive(path, snapshot());
    last_checkpoint_ = path;
}

MetricsRow Trainer::step() {
    if (finished()) throw ConfigError("training schedule already complete");
    const std::size_t epoch = step_ / steps_per_epoch_, index = step_ % steps_per_epoch_;
    if (!stream_ || stream_epoch_ != epoch) {
        stream_.emplace(*train_, cfg_.data.batch_size, cfg_.seed, epoch, augment_flags(cfg_.data, true));
        stream_epoch_ = epoch;
    }
    if (index == 0 && cfg_.ablation.reset_memory_each_epoch) model_->reset_memories();
    Batch batch = stream_->batch(index);
    const double lr = schedule_(step_);

    MetricsRow row;
    row.epoch = epoch;
    row.step = step_;
    row.lr = lr;
    const std::string last_good =
        last_checkpoint_.empty() ? std::string("none written yet") : last_checkpoint_.string();
    GradTape tape;
    Tensor total;
    try {
        TapeScope scope(tape);
        ForwardOptions opts;
        opts.training = true;
        opts.energy_stats = cfg_.ablation.use_memory && cfg_.ablation.use_hopfield;
        ForwardResult fwd = model_->forward(batch.images, opts);
        Tensor task = cross_entropy(fwd.logits, batch.labels);
        total = add(task, fwd.balance_loss);
        row.task_loss = task.item();
        row.bottleneck_loss = fwd.balance_loss.item();
        row.distinct_patch_ratio = fwd.distinct_patch_ratio;
        row.mean_energy_drop = fwd.mean_energy_drop;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < batch.labels.size(); ++i)
            correct += argmax_row(fwd.logits, i) == static_cast<std::size_t>(batch.labels[i]);
        row.accuracy = static_cast<double>(correct) / static_cast<double>(batch.labels.size());
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step_) +
                           "; last good checkpoint: " + last_good);
    }
    row.loss = total.item();
    if (!std::isfinite(row.loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(step_) + "; last good checkpoint: " + last_good);
    }
    tape.backward(total);
    optimizer_->step(lr);
    optimizer_->zero_grad();
    ++step_;
    return row;
}

void Trainer::open_metrics(bool fresh) {
    const auto path = metrics_path();
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::string kept = metrics_header() + "\n";
    if (!fresh) {
        // keep rows from before the resume point so the file stays a single run
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto c1 = line.find(',');
            if (c1 == std::string::npos) continue;
            const auto c2 = line.find(',', c1 + 1);
            if (std::stoull(line.substr(c1 + 1, c2 - c1 - 1)) < step_) kept += line + "\n";
        }
    }
    std::ofstream out(path, std::ios::trunc);
    out << kept;
    out.flush();
    if (!out) throw IoError("cannot write metrics to " + path.string());
}

std::vector<MetricsRow> Trainer::run(std::size_t max_steps) {
    open_metrics(step_ == 0);
    std::ofstream metrics(metrics_path(), std::ios::app);
    if (!metrics) throw IoError("cannot append to " + metrics_path().string());
    const auto dir = std::filesystem::path(cfg_.output.dir);
    std::vector<MetricsRow> rows;
    while (!finished() && (max_steps == 0 || step_ < max_steps)) {
        rows.push_back(step());
        metrics << format_metrics(rows.back()) << '\n';
        metrics.flush();
        if (!metrics) throw IoError("short write to " + metrics_path().string() + " (disk full?)");
        if (step_ % steps_per_epoch_ == 0 && cfg_.output.checkpoint_each_epoch) {
            save(dir / ("epoch_" + std::to_string(step_ / steps_per_epoch_ - 1) + ".ckpt"));
        }
    }
    save(dir / "last.ckpt");
    return rows;
}

TrainSummary train(const TrainConfig& cfg) {
    cfg.validate();
    DataSplits data = load_splits(cfg);
    Trainer trainer(cfg, data.train);
    TrainSummary summary;
    summary.rows = trainer.run(cfg.output.max_steps);
    summary.checkpoint = trainer.last_checkpoint();
    if (data.test) {
        check_compatible(trainer.model(), *data.test);
        summary.test_accuracy =
            evaluate(trainer.model(), *data.test, cfg.data.batch_size, augment_flags(cfg.data, false)).accuracy;
    }
    return summary;
}

void check_compatible(const AitModel& model, const LabeledImageSet& set) {
    const auto& g = model.geometry();
    if (set.height != g.height || set.width != g.width || set.channels != g.channels) {
        throw ShapeError("dataset images are " + std::to_string(set.height) + "x" + std::to_string(set.width) + "x" +
                         std::to_string(set.channels) + " but the model expects " + std::to_string(g.height) + "x" +
                         std::to_string(g.width) + "x" + std::to_string(g.channels) + " with patch size " +
                         std::to_string(g.patch_size));
    }
    if (set.class_count > model.classes()) {
        throw ShapeError("dataset has " + std::to_string(set.class_count) + " classes, model has " +
                         std::to_string(model.classes()));
    }
}

EvalReport evaluate(AitModel& model, const LabeledImageSet& set, std::size_t batch_size, const AugmentFlags& flags) {
    check_compatible(model, set);
    EvalReport report;
    report.count = set.count;
    report.per_class_total.assign(model.classes(), 0);
    report.per_class_correct.assign(model.classes(), 0);
    if (set.count == 0) return report;
    AugmentFlags f = flags;
    f.shuffle = false;
    f.hflip = false;
    BatchStream stream(set, batch_size, 0, 0, f);
    NoGradScope no_grad;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < stream.size(); ++b) {
        Batch batch = stream.batch(b);
        ForwardResult fwd = model.forward(batch.images, {});
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            const auto label = static_cast<std::size_t>(batch.labels[i]);
            const bool hit = argmax_row(fwd.logits, i) == label;
            ++report.per_class_total[label];
            report.per_class_correct[label] += hit;
            correct += hit;
        }
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(set.count);
    return report;
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
    Archive a = load_archive(checkpoint);
    LoadedModel out;
    out.config = parse_config(a.text("config"));
    ImageGeometry g{a.u64("meta.height"), a.u64("meta.width"), a.u64("meta.channels"), out.config.data.patch_size};
    out.model = std::make_unique<AitModel>(out.config.model, out.config.ablation, out.config.loss, g,
                                           a.u64("meta.classes"), out.config.seed);
    for (auto& [name, t] : out.model->named_parameters()) a.load_into("param." + name, t);
    for (std::size_t l = 0; l < out.model->memories().size(); ++l) {
        a.load_into("memory.layer" + std::to_string(l), out.model->memories()[l].gamma);
    }
    out.step = a.u64("meta.step");
    return out;
}

}  // namespace ait
