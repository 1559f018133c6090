// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ait/analysis.hpp"
#include "ait/checkpoint.hpp"
#include "ait/data.hpp"
#include "ait/hopfield.hpp"
#include "ait/trainer.hpp"
#include "ait/workspace.hpp"
#include "gradcheck.hpp"

using namespace ait;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path work_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "ait_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// AiT-tiny on 32x32 grayscale toy images.
TrainConfig tiny_run(const std::string& generator, std::size_t train_count, std::size_t test_count,
                     std::size_t epochs, std::uint64_t seed, const fs::path& dir) {
    TrainConfig c;
    c.model = testing::tiny_model_config();
    c.seed = seed;
    c.data.generator = generator;
    c.data.train_count = train_count;
    c.data.test_count = test_count;
    c.data.side = 32;
    c.data.patch_size = 8;
    c.data.batch_size = 64;
    c.optimizer.lr = 1e-3;
    c.schedule.epochs = epochs;
    c.schedule.warmup_epochs = std::max<std::size_t>(1, epochs / 10);
    c.output.dir = dir.string();
    c.output.checkpoint_each_epoch = false;
    return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = Clock::now();
    double worst = 0;
    std::string worst_name, failed;
    std::size_t checked = 0;
    const auto cases = testing::grad_cases();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        std::mt19937_64 rng(1234 + i);
        auto problem = cases[i].build(rng);
        auto r = testing::run_grad_check(problem, 1e-3, rng, 48);
        checked += r.checked;
        if (r.rel_error > worst) worst = r.rel_error, worst_name = cases[i].name;
        if (r.rel_error >= 1e-3 || r.checked == 0) failed += " " + cases[i].name;
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = failed.empty() && secs < 120;
    o.detail = fmt("%zu cases, %zu coordinates, worst rel %.2e (%s), %.1f s", cases.size(), checked, worst,
                   worst_name.c_str(), secs);
    if (!failed.empty()) o.detail += "; over tolerance:" + failed;
    return o;
}

Outcome bottleneck_cardinality() {
    std::mt19937_64 rng(2);
    std::size_t rows = 0, bad_rows = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng() % 8, d = 2 + rng() % 7, heads = 1 + rng() % 4, bn = 1 + rng() % 40;
        const std::size_t e = 2 + rng() % 15, k = 1 + rng() % bn;
        auto params = WorkspaceLayerParams::init(e, d, heads, k, rng);
        auto mem = init_memory(MemoryInit::gaussian, m, d, rng());
        auto result = bottleneck_attention(mem, Tensor::uniform({bn, e}, rng, -2, 2), params);
        const auto& masked = result.diagnostics.masked;
        for (std::size_t r = 0; r < heads * m; ++r, ++rows) {
            std::size_t nz = 0;
            for (std::size_t l = 0; l < bn; ++l) nz += masked[r * bn + l] != 0;
            bad_rows += nz != std::min(k, bn);
        }
    }
    // k = B*N against the unmasked path, on full AiT-tiny forwards
    double max_diff = 0;
    auto set = gen_triangle(2, 32, 5);
    std::vector<std::size_t> idx = {0, 1};
    Tensor images = set.images(idx);
    const ImageGeometry g{32, 32, 1, 8};
    ModelConfig mc = testing::tiny_model_config();
    mc.bottleneck_size = 2 * g.patches();
    AblationConfig masked_on, masked_off;
    masked_off.use_bottleneck = false;
    AitModel a(mc, masked_on, {}, g, 2, 9), b(mc, masked_off, {}, g, 2, 9);
    auto fa = a.forward(images), fb = b.forward(images);
    for (std::size_t i = 0; i < fa.logits.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(static_cast<double>(fa.logits[i]) - fb.logits[i]));
    Outcome o;
    o.pass = bad_rows == 0 && max_diff <= 1e-6;
    o.detail = fmt("%zu rows, %zu with the wrong count; k = B*N logit diff %.2e", rows, bad_rows, max_diff);
    return o;
}

Outcome memory_normalization() {
    std::mt19937_64 rng(3);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng() % 16, d = 1 + rng() % 16;
        ExplicitMemory mem{Tensor::randn({m, d}, rng, Scalar(0.1 + (trial % 7))),
                           Scalar(std::uniform_real_distribution<double>(0.01, 0.99)(rng))};
        for (int step = 0; step < 3; ++step) {
            mem = update_memory(mem, Tensor::randn({m, d}, rng, 3));
            double n = 0;
            for (auto v : mem.gamma.data()) n += static_cast<double>(v) * v;
            worst = std::max(worst, std::abs(std::sqrt(n) - 1));
        }
    }
    // eval-mode forwards must not touch memory
    const ImageGeometry g{32, 32, 1, 8};
    AitModel model(testing::tiny_model_config(), {}, {}, g, 2, 4);
    std::vector<std::vector<Scalar>> before;
    for (const auto& mem : model.memories()) before.emplace_back(mem.gamma.data().begin(), mem.gamma.data().end());
    auto set = gen_triangle(16, 32, 6);
    for (std::size_t i = 0; i + 4 <= 16; i += 4) {
        std::vector<std::size_t> idx = {i, i + 1, i + 2, i + 3};
        NoGradScope no_grad;
        model.forward(set.images(idx));
    }
    evaluate(model, set, 8, {});
    bool unchanged = true;
    for (std::size_t l = 0; l < before.size(); ++l)
        unchanged = unchanged && std::memcmp(before[l].data(), model.memories()[l].gamma.ptr(),
                                             before[l].size() * sizeof(Scalar)) == 0;
    Outcome o;
    o.pass = worst <= 1e-6 && unchanged;
    o.detail = fmt("3000 updates, worst |norm - 1| %.2e; eval memory %s", worst,
                   unchanged ? "bitwise unchanged" : "CHANGED");
    return o;
}

Outcome hopfield_descent() {
    std::mt19937_64 rng(4);
    double worst_rise = -1e300;
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng() % 16, e = 2 + rng() % 32;
        const Scalar beta = Scalar(std::exp(std::uniform_real_distribution<double>(std::log(0.05), std::log(20))(rng)));
        Tensor gamma = Tensor::randn({m, e}, rng);
        Tensor eye({e, e});
        for (std::size_t i = 0; i < e; ++i) eye[i * e + i] = 1;
        auto bank = build_attractors(gamma, eye, beta, 5, 0);
        auto r = retrieve(Tensor::randn({e}, rng, 2), bank);
        for (std::size_t s = 1; s < r.report.energy_trace.size(); ++s) {
            const double rise = r.report.energy_trace[s] - r.report.energy_trace[s - 1];
            worst_rise = std::max(worst_rise, rise);
            violations += rise > 1e-6;
        }
    }
    double worst_single = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t e = 2 + rng() % 32;
        Tensor x = Tensor::randn({1, e}, rng);
        Tensor eye({e, e});
        for (std::size_t i = 0; i < e; ++i) eye[i * e + i] = 1;
        auto bank = build_attractors(x, eye, Scalar(0.1 + trial % 10), 5, 0);
        Tensor xi({e});
        std::copy_n(x.ptr(), e, xi.ptr());
        worst_single = std::max(worst_single, std::abs(energy(xi, bank)));
    }
    Outcome o;
    o.pass = violations == 0 && worst_single <= 1e-5;
    o.detail = fmt("1000 pairs x 5 steps, largest step-to-step change %+.2e, %zu rises; M=1 stored energy max |E| %.2e",
                   worst_rise, violations, worst_single);
    return o;
}

Outcome retrieval_fidelity() {
    std::mt19937_64 rng(5);
    const std::size_t e = 16;
    std::normal_distribution<double> nd;
    Tensor eye({e, e});
    for (std::size_t i = 0; i < e; ++i) eye[i * e + i] = 1;
    auto random_unit = [&] {
        std::vector<double> v(e);
        double n = 0;
        for (auto& x : v) n += (x = nd(rng)) * x;
        for (auto& x : v) x /= std::sqrt(n);
        return v;
    };
    std::size_t hits = 0;
    double worst_cos = 1, worst_mean_dist = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto u = random_unit(), w = random_unit();
        double dot = 0;
        for (std::size_t i = 0; i < e; ++i) dot += u[i] * w[i];
        double n = 0;
        for (std::size_t i = 0; i < e; ++i) n += (w[i] -= dot * u[i]) * w[i];
        for (auto& x : w) x /= std::sqrt(n);
        Tensor x({2, e});
        for (std::size_t i = 0; i < e; ++i) x[i] = Scalar(4 * u[i]), x[e + i] = Scalar(4 * w[i]);
        const std::size_t target = trial % 2;
        auto noise = random_unit();
        Tensor q({e});
        for (std::size_t i = 0; i < e; ++i) q[i] = Scalar(x[target * e + i] + 0.4 * noise[i]);

        auto sharp = retrieve(q, build_attractors(x, eye, 8, 1, 0));
        double c = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < e; ++i) {
            c += static_cast<double>(sharp.xi_hat[i]) * x[target * e + i];
            a += static_cast<double>(sharp.xi_hat[i]) * sharp.xi_hat[i];
            b += static_cast<double>(x[target * e + i]) * x[target * e + i];
        }
        const double cosine = c / std::sqrt(a * b);
        worst_cos = std::min(worst_cos, cosine);
        hits += cosine >= 0.99;

        // metastable limit: iterate to the fixed point near the mean
        auto flat = retrieve(q, build_attractors(x, eye, Scalar(0.01), 50, 1e-9));
        double dist = 0;
        for (std::size_t i = 0; i < e; ++i) {
            const double mean = (static_cast<double>(x[i]) + x[e + i]) / 2;
            dist += (flat.xi_hat[i] - mean) * (flat.xi_hat[i] - mean);
        }
        worst_mean_dist = std::max(worst_mean_dist, std::sqrt(dist));
    }
    Outcome o;
    o.pass = hits >= 99 && worst_mean_dist <= 1e-2;
    o.detail = fmt("beta=8: %zu/100 with cosine >= 0.99 (min %.4f); beta=0.01: max distance to mean %.2e", hits,
                   worst_cos, worst_mean_dist);
    return o;
}

double final_epoch_ratio(const std::vector<MetricsRow>& rows) {
    const std::size_t last = rows.back().epoch;
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.epoch == last) sum += r.distinct_patch_ratio, ++n;
    return sum / static_cast<double>(n);
}

Outcome balance_efficacy() {
    const auto t0 = Clock::now();
    std::string detail;
    bool all_higher = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        double ratio[2];
        for (int on = 0; on < 2; ++on) {
            TrainConfig c = tiny_run("two-blob", 1000, 0, 5, seed, work_dir("balance"));
            c.loss.sigma = on ? 1e-2 : 0;
            ratio[on] = final_epoch_ratio(train(c).rows);
        }
        all_higher = all_higher && ratio[1] > ratio[0];
        detail += fmt("%sseed %llu: %.4f vs %.4f", detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed),
                      ratio[1], ratio[0]);
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = all_higher && secs < 600;
    o.detail = "distinct ratio with vs without loss, " + detail + fmt(" (%.0f s)", secs);
    return o;
}

enum class Variant { full, no_memory, no_bottleneck };

// Triangle at full toy scale (5k/1k, 50 epochs); runs are shared between
// the learning and ablation checks.
double triangle_accuracy(Variant variant, std::uint64_t seed) {
    static std::map<std::pair<int, std::uint64_t>, double> cache;
    const auto key = std::make_pair(static_cast<int>(variant), seed);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    TrainConfig c = tiny_run("triangle", 5000, 1000, 50, seed, work_dir("triangle"));
    if (variant == Variant::no_memory) c.ablation.use_memory = c.ablation.use_hopfield = c.ablation.use_bottleneck = false;
    if (variant == Variant::no_bottleneck) c.ablation.use_bottleneck = false;
    return cache[key] = *train(c).test_accuracy;
}

Outcome toy_task_learning() {
    const auto t0 = Clock::now();
    const double tri_acc = triangle_accuracy(Variant::full, 1);
    TrainConfig blob = tiny_run("two-blob", 1000, 500, 10, 1, work_dir("two_blob"));
    const double blob_acc = *train(blob).test_accuracy;
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = tri_acc >= 0.90 && blob_acc >= 0.99 && secs < 45 * 60;
    o.detail = fmt("triangle %.4f, two-blob %.4f, %.1f min", tri_acc, blob_acc, secs / 60);
    return o;
}

Outcome ablation_direction() {
    const auto t0 = Clock::now();
    const Variant variants[3] = {Variant::full, Variant::no_memory, Variant::no_bottleneck};
    const char* names[3] = {"full", "w/o memory", "w/o bottleneck"};
    double mean[3] = {0, 0, 0};
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        per_seed += fmt("%sseed %llu:", per_seed.empty() ? "" : ";", static_cast<unsigned long long>(seed));
        for (int v = 0; v < 3; ++v) {
            const double acc = triangle_accuracy(variants[v], seed);
            mean[v] += acc / 3;
            per_seed += fmt(" %.3f", acc);
        }
    }
    Outcome o;
    o.pass = mean[0] >= mean[1] && mean[2] < mean[0];
    o.detail = fmt("mean accuracy %s %.4f, %s %.4f, %s %.4f (%s; %.1f min)", names[0], mean[0], names[1], mean[1],
                   names[2], mean[2], per_seed.c_str(), seconds_since(t0) / 60);
    return o;
}

std::size_t brute_sparsity(std::vector<double> row, double threshold) {
    std::sort(row.begin(), row.end(), std::greater<>());
    for (std::size_t s = 1; s <= row.size(); ++s) {
        long double acc = 0;
        for (std::size_t i = 0; i < s; ++i) acc += row[i];
        if (acc >= threshold - 1e-6) return s;
    }
    return row.size();
}

Outcome sparsity_correctness() {
    std::size_t mismatches = 0, checked = 0;
    // uniform and one-hot fixtures over every head of a [B x A x N x N] table
    for (std::size_t n : {1, 4, 10, 16, 64}) {
        const std::size_t b = 2, a = 3;
        Tensor uniform({b, a, n, n}, Scalar(1.0 / static_cast<double>(n)));
        Tensor onehot({b, a, n, n});
        for (std::size_t r = 0; r < b * a * n; ++r) onehot[r * n + (r * 7) % n] = 1;
        for (int kind = 0; kind < 2; ++kind) {
            SparsityReport report;
            report.layers = 1;
            report.heads = a;
            report.patches = n;
            report.threshold = 0.9;
            accumulate_sparsity(report, {kind == 0 ? uniform : onehot}, 0);
            finish_sparsity(report);
            const auto want = kind == 0 ? static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n))) : 1;
            for (const auto& rec : report.records) mismatches += rec.s != want, ++checked;
            for (auto med : report.mean_median[0]) mismatches += med != static_cast<double>(want);
        }
    }
    std::mt19937_64 rng(9);
    std::gamma_distribution<double> gam(0.5, 1);
    for (int t = 0; t < 2000; ++t) {
        const std::size_t n = 1 + rng() % 64;
        std::vector<Scalar> row(n);
        double z = 0;
        for (auto& v : row) z += (v = Scalar(gam(rng) + 1e-6));
        std::vector<double> as_double(n);
        for (std::size_t i = 0; i < n; ++i) as_double[i] = row[i] = Scalar(row[i] / z);
        const double threshold = std::uniform_real_distribution<double>(0.05, 0.99)(rng);
        mismatches += sparsity_count(row, threshold) != brute_sparsity(as_double, threshold);
        ++checked;
    }
    Outcome o;
    o.pass = mismatches == 0;
    o.detail = fmt("%zu fixture rows checked, %zu mismatches", checked, mismatches);
    return o;
}

Outcome determinism_persistence() {
    std::string metrics[2];
    for (int run = 0; run < 2; ++run) {
        const auto dir = work_dir("determinism" + std::to_string(run));
        TrainConfig c = tiny_run("two-blob", 256, 0, 2, 7, dir);
        train(c);
        metrics[run] = slurp(dir / "metrics.csv");
    }
    const bool same_metrics = !metrics[0].empty() && metrics[0] == metrics[1];

    auto set = gen_triangle(192, 32, 8);
    const auto full_dir = work_dir("resume_full"), split_dir = work_dir("resume_split");
    Trainer full(tiny_run("triangle", 192, 0, 3, 5, full_dir), set);
    full.run();
    Trainer first(tiny_run("triangle", 192, 0, 3, 5, split_dir), set);
    first.run(4);
    Trainer second = Trainer::resume(split_dir / "last.ckpt", set);
    second.run();
    bool params_equal = true;
    const auto pa = full.model().named_parameters(), pb = second.model().named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        params_equal = params_equal && std::memcmp(pa[i].second.ptr(), pb[i].second.ptr(),
                                                   pa[i].second.numel() * sizeof(Scalar)) == 0;
    for (std::size_t l = 0; l < full.model().memories().size(); ++l)
        params_equal = params_equal && std::memcmp(full.model().memories()[l].gamma.ptr(),
                                                   second.model().memories()[l].gamma.ptr(),
                                                   full.model().memories()[l].gamma.numel() * sizeof(Scalar)) == 0;

    const auto data_path = split_dir / "set.aitdata";
    store_dataset(data_path, set);
    const auto data_bytes = read_bytes(data_path);
    const bool data_roundtrip = encode_dataset(load_dataset(data_path)) == data_bytes;
    const auto ckpt_bytes = read_bytes(full_dir / "last.ckpt");
    save_archive(full_dir / "copy.ckpt", load_archive(full_dir / "last.ckpt"));
    const bool ckpt_roundtrip = read_bytes(full_dir / "copy.ckpt") == ckpt_bytes;

    Outcome o;
    o.pass = same_metrics && params_equal && data_roundtrip && ckpt_roundtrip;
    o.detail = fmt("metrics %s, resume %s, AITDATA1 %s, AITCKPT1 %s", same_metrics ? "identical" : "DIFFER",
                   params_equal ? "bit-exact" : "DIFFERS", data_roundtrip ? "identical" : "DIFFERS",
                   ckpt_roundtrip ? "identical" : "DIFFERS");
    return o;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient integrity", gradient_integrity},
        {2, "bottleneck cardinality", bottleneck_cardinality},
        {3, "memory normalization", memory_normalization},
        {4, "Hopfield energy descent", hopfield_descent},
        {5, "retrieval fidelity", retrieval_fidelity},
        {6, "balance-loss efficacy", balance_efficacy},
        {7, "toy task learning", toy_task_learning},
        {8, "ablation direction", ablation_direction},
        {9, "sparsity analyzer", sparsity_correctness},
        {10, "determinism and persistence", determinism_persistence},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    int failures = 0;
    for (const auto& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
