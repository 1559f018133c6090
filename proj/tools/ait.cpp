#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ait/analysis.hpp"
#include "ait/config.hpp"
#include "ait/data.hpp"
#include "ait/error.hpp"
#include "ait/trainer.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

int gen_data(const std::string& kind, std::size_t count, std::size_t side, std::uint64_t seed,
             const std::string& out) {
    ait::LabeledImageSet set;
    if (kind == "triangle") {
        set = ait::gen_triangle(count, side, seed);
    } else if (kind == "two-blob") {
        set = ait::gen_two_blob(count, side, seed);
    } else {
        throw ait::ConfigError("unknown generator '" + kind + "' (triangle or two-blob)");
    }
    ait::store_dataset(out, set);
    std::size_t positives = 0;
    for (auto l : set.labels) positives += l == 1;
    std::printf("wrote %zu %zux%zu images to %s (%zu with label 1)\n", set.count, set.height, set.width, out.c_str(),
                positives);
    return kOk;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& resume) {
    ait::TrainConfig cfg;
    std::vector<ait::MetricsRow> rows;
    std::optional<double> test_accuracy;
    std::filesystem::path ckpt;
    if (!resume.empty()) {
        // the checkpoint carries its own config; overrides may extend the run
        ait::Archive archive = ait::load_archive(resume);
        cfg = ait::parse_config(archive.text("config"));
        for (const auto& o : overrides) ait::apply_override(cfg, o);
        cfg.validate();
        ait::DataSplits data = ait::load_splits(cfg);
        ait::Trainer trainer = ait::Trainer::resume(resume, data.train);
        rows = trainer.run(cfg.output.max_steps);
        ckpt = trainer.last_checkpoint();
        if (data.test) {
            test_accuracy = ait::evaluate(trainer.model(), *data.test, cfg.data.batch_size,
                                          ait::augment_flags(cfg.data, false))
                                .accuracy;
        }
    } else {
        if (!config_path.empty()) cfg = ait::load_config(config_path);
        for (const auto& o : overrides) ait::apply_override(cfg, o);
        auto summary = ait::train(cfg);
        rows = std::move(summary.rows);
        test_accuracy = summary.test_accuracy;
        ckpt = summary.checkpoint;
    }
    if (!rows.empty()) {
        const auto& last = rows.back();
        std::printf("steps %zu  final loss %.6g  batch accuracy %.4f\n", last.step + 1, last.loss, last.accuracy);
    }
    if (test_accuracy) std::printf("test accuracy %.4f\n", *test_accuracy);
    std::printf("checkpoint %s\n", ckpt.string().c_str());
    return kOk;
}

int run_eval(const std::string& ckpt, const std::string& data_path) {
    auto loaded = ait::load_model(ckpt);
    auto set = ait::load_dataset(data_path, ait::Split::test);
    auto report = ait::evaluate(*loaded.model, set, loaded.config.data.batch_size,
                                ait::augment_flags(loaded.config.data, false));
    std::printf("accuracy %.4f (%zu samples)\n", report.accuracy, report.count);
    std::printf("class,count,correct,accuracy\n");
    for (std::size_t c = 0; c < report.per_class_total.size(); ++c) {
        const auto total = report.per_class_total[c];
        std::printf("%zu,%zu,%zu,%.4f\n", c, total, report.per_class_correct[c],
                    total ? static_cast<double>(report.per_class_correct[c]) / static_cast<double>(total) : 0.0);
    }
    return kOk;
}

int run_sparsity(const std::string& ckpt, const std::string& data_path, double threshold, const std::string& out) {
    auto loaded = ait::load_model(ckpt);
    auto set = ait::load_dataset(data_path, ait::Split::test);
    auto report = ait::analyze_sparsity(*loaded.model, set, threshold, loaded.config.data.batch_size,
                                        ait::augment_flags(loaded.config.data, false));
    ait::write_sparsity_csv(out, report);
    std::printf("layer,head,mean_median_s (N = %zu patches, threshold %.3g)\n", report.patches, threshold);
    for (std::size_t l = 0; l < report.layers; ++l)
        for (std::size_t h = 0; h < report.heads; ++h) std::printf("%zu,%zu,%.3f\n", l, h, report.mean_median[l][h]);
    std::printf("wrote %zu rows to %s\n", report.records.size(), out.c_str());
    return kOk;
}

int run_inspect(const std::string& ckpt, const std::string& data_path, const std::string& out, std::size_t images) {
    auto loaded = ait::load_model(ckpt);
    auto set = ait::load_dataset(data_path, ait::Split::test);
    auto result = ait::inspect_memory(*loaded.model, set, out, images, ait::augment_flags(loaded.config.data, false));
    std::printf("wrote %zu heatmaps and %s\n", result.heatmaps.size(), result.csv.string().c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Associative Transformer trainer and analysis tools"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic AITDATA1 dataset");
    std::string gen_kind, gen_out;
    std::size_t gen_count = 1000, gen_side = 32;
    std::uint64_t gen_seed = 1;
    gen->add_option("kind", gen_kind, "triangle or two-blob")->required();
    gen->add_option("--count", gen_count, "number of images");
    gen->add_option("--side", gen_side, "image side in pixels");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output file")->required();

    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_config, train_resume;
    std::vector<std::string> overrides;
    train->add_option("--config", train_config, "flat key = value config file");
    train->add_option("--override", overrides, "key=value, applied after the config file")->take_all();
    train->add_option("--resume", train_resume, "continue from a checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data;
    eval->add_option("--ckpt", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();

    auto* analyze = app.add_subcommand("analyze", "Attention analyses");
    analyze->require_subcommand(1);
    auto* sparsity = analyze->add_subcommand("sparsity", "Per-head self-attention sparsity");
    std::string sp_ckpt, sp_data, sp_out = "sparsity.csv";
    double sp_threshold = 0.9;
    sparsity->add_option("--ckpt", sp_ckpt)->required();
    sparsity->add_option("--data", sp_data)->required();
    sparsity->add_option("--threshold", sp_threshold, "cumulative attention mass");
    sparsity->add_option("--out", sp_out, "CSV output");

    auto* inspect = app.add_subcommand("inspect", "Model inspection");
    inspect->require_subcommand(1);
    auto* memory = inspect->add_subcommand("memory", "Per-slot bottleneck attention heatmaps");
    std::string mem_ckpt, mem_data, mem_out = "memory";
    std::size_t mem_images = 1;
    memory->add_option("--ckpt", mem_ckpt)->required();
    memory->add_option("--data", mem_data)->required();
    memory->add_option("--out", mem_out, "output directory");
    memory->add_option("--images", mem_images, "images in the inspected batch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (gen->parsed()) return gen_data(gen_kind, gen_count, gen_side, gen_seed, gen_out);
        if (train->parsed()) return run_train(train_config, overrides, train_resume);
        if (eval->parsed()) return run_eval(eval_ckpt, eval_data);
        if (sparsity->parsed()) return run_sparsity(sp_ckpt, sp_data, sp_threshold, sp_out);
        if (memory->parsed()) return run_inspect(mem_ckpt, mem_data, mem_out, mem_images);
    } catch (const ait::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const ait::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kNumeric;
    } catch (const ait::Error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kData;
    }
    return kOk;
}
