#include "ait/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>

#include "ait/error.hpp"
#include "ait/trainer.hpp"

namespace ait {

namespace {

double median(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? static_cast<double>(v[n / 2]) : 0.5 * static_cast<double>(v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::size_t sparsity_count(std::span<const Scalar> row, double threshold) {
    std::vector<Scalar> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double acc = 0;
    for (std::size_t s = 0; s < sorted.size(); ++s) {
        acc += sorted[s];
        // float rows summing to exactly the threshold land a few ulps short
        if (acc >= threshold - 1e-6) return s + 1;
    }
    return sorted.size();
}

void accumulate_sparsity(SparsityReport& report, const std::vector<Tensor>& layer_scores, std::size_t first_sample) {
    for (std::size_t l = 0; l < layer_scores.size(); ++l) {
        const Tensor& a = layer_scores[l];
        if (a.rank() != 4 || a.dim(2) != a.dim(3)) throw ShapeError("attention scores must be [B x A x N x N]");
        const std::size_t b = a.dim(0), h = a.dim(1), n = a.dim(2);
        report.layers = std::max(report.layers, l + 1);
        report.heads = h;
        report.patches = n;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t hd = 0; hd < h; ++hd)
                for (std::size_t q = 0; q < n; ++q) {
                    const std::size_t off = ((i * h + hd) * n + q) * n;
                    report.records.push_back(
                        {l, hd, first_sample + i, q, sparsity_count(a.data().subspan(off, n), report.threshold)});
                }
    }
}

void finish_sparsity(SparsityReport& report) {
    // records are grouped by (layer, sample, head) runs of `patches` queries
    std::vector<std::vector<double>> sum(report.layers, std::vector<double>(report.heads, 0.0));
    std::vector<std::vector<std::size_t>> samples(report.layers, std::vector<std::size_t>(report.heads, 0));
    for (std::size_t i = 0; i + report.patches <= report.records.size(); i += report.patches) {
        std::vector<std::size_t> s;
        for (std::size_t q = 0; q < report.patches; ++q) s.push_back(report.records[i + q].s);
        const auto& r = report.records[i];
        sum[r.layer][r.head] += median(std::move(s));
        ++samples[r.layer][r.head];
    }
    report.mean_median.assign(report.layers, std::vector<double>(report.heads, 0.0));
    for (std::size_t l = 0; l < report.layers; ++l)
        for (std::size_t h = 0; h < report.heads; ++h)
            if (samples[l][h]) report.mean_median[l][h] = sum[l][h] / static_cast<double>(samples[l][h]);
}

SparsityReport analyze_sparsity(AitModel& model, const LabeledImageSet& set, double threshold,
                                std::size_t batch_size, const AugmentFlags& flags) {
    check_compatible(model, set);
    SparsityReport report;
    report.threshold = threshold;
    AugmentFlags f = flags;
    f.shuffle = false;
    f.hflip = false;
    BatchStream stream(set, batch_size, 0, 0, f);
    NoGradScope no_grad;
    ForwardOptions opts;
    opts.keep_attention = true;
    for (std::size_t b = 0; b < stream.size(); ++b) {
        ForwardResult fwd = model.forward(stream.batch(b).images, opts);
        std::vector<Tensor> scores;
        for (const auto& layer : fwd.layers)
            if (layer.attention.rank() == 4) scores.push_back(layer.attention);
        if (scores.empty()) throw ConfigError("sparsity analysis needs self-attention (ablation.use_sa = true)");
        accumulate_sparsity(report, scores, b * batch_size);
    }
    finish_sparsity(report);
    return report;
}

void write_sparsity_csv(const std::filesystem::path& path, const SparsityReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "layer,head,sample,query,s\n";
    for (const auto& r : report.records) out << r.layer << ',' << r.head << ',' << r.sample << ',' << r.query << ',' << r.s << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

MemoryInspection inspect_memory(AitModel& model, const LabeledImageSet& set, const std::filesystem::path& out_dir,
                                std::size_t images, const AugmentFlags& flags) {
    check_compatible(model, set);
    if (!model.has_workspace()) throw ConfigError("memory inspection needs ablation.use_memory = true");
    if (images == 0 || images > set.count) {
        throw ParameterError("inspect needs 1.." + std::to_string(set.count) + " images, got " + std::to_string(images));
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    AugmentFlags f = flags;
    f.shuffle = false;
    f.hflip = false;
    BatchStream stream(set, images, 0, 0, f);
    NoGradScope no_grad;
    ForwardResult fwd = model.forward(stream.batch(0).images, {});

    const auto& g = model.geometry();
    const std::size_t n = g.patches();
    MemoryInspection result;
    result.images = images;
    result.csv = out_dir / "scores.csv";
    std::ofstream csv(result.csv);
    if (!csv) throw IoError("cannot open " + result.csv.string() + " for writing");
    csv << "layer,head,slot,sample,patch,score\n" << std::setprecision(9);
    for (std::size_t l = 0; l < fwd.layers.size(); ++l) {
        const auto& diag = *fwd.layers[l].bottleneck;
        const std::size_t heads = diag.heads(), slots = diag.slots(), positions = diag.positions();
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < slots; ++j)
                for (std::size_t i = 0; i < images; ++i) {
                    const auto row = diag.scores.data().subspan((h * slots + j) * positions + i * n, n);
                    for (std::size_t p = 0; p < n; ++p)
                        csv << l << ',' << h << ',' << j << ',' << i << ',' << p << ',' << row[p] << '\n';
                    auto file = out_dir / ("layer" + std::to_string(l) + "_head" + std::to_string(h) + "_slot" +
                                           std::to_string(j) + "_sample" + std::to_string(i) + ".pgm");
                    write_pgm(file, row, g.grid_rows(), g.grid_cols());
                    result.heatmaps.push_back(std::move(file));
                }
    }
    if (!csv) throw IoError("short write to " + result.csv.string());
    return result;
}

}  // namespace ait
