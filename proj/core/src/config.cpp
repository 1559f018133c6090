#include "ait/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ait/error.hpp"

namespace ait {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + std::string(key) + "': '" + std::string(v) + "' is not a non-negative integer");
    }
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + std::string(key) + "': '" + std::string(v) + "' is not a number");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("key '" + std::string(key) + "': '" + std::string(v) + "' is not a boolean");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::string key;
    std::function<void(TrainConfig&, std::string_view)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define AIT_SIZE(KEY, MEMBER)                                                                         \
    Field {                                                                                           \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = parse_int<std::size_t>(KEY, v); }, \
            [](const TrainConfig& c) { return std::to_string(c.MEMBER); }                            \
    }
#define AIT_U64(KEY, MEMBER)                                                                            \
    Field {                                                                                             \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = parse_int<std::uint64_t>(KEY, v); }, \
            [](const TrainConfig& c) { return std::to_string(c.MEMBER); }                              \
    }
#define AIT_DOUBLE(KEY, MEMBER)                                                                       \
    Field {                                                                                           \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = parse_double(KEY, v); },             \
            [](const TrainConfig& c) { return fmt_double(static_cast<double>(c.MEMBER)); }           \
    }
#define AIT_SCALAR(KEY, MEMBER)                                                                                 \
    Field {                                                                                                     \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = static_cast<Scalar>(parse_double(KEY, v)); }, \
            [](const TrainConfig& c) { return fmt_double(static_cast<double>(c.MEMBER)); }                     \
    }
#define AIT_BOOL(KEY, MEMBER)                                                             \
    Field {                                                                               \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = parse_bool(KEY, v); },   \
            [](const TrainConfig& c) { return std::string(c.MEMBER ? "true" : "false"); } \
    }
#define AIT_STRING(KEY, MEMBER)                                                                \
    Field {                                                                                    \
        KEY, [](TrainConfig& c, std::string_view v) { c.MEMBER = std::string(v); },            \
            [](const TrainConfig& c) { return c.MEMBER; }                                      \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        AIT_U64("seed", seed),
        AIT_SIZE("model.layers", model.layers),
        AIT_SIZE("model.embed_dim", model.embed_dim),
        AIT_SIZE("model.heads", model.heads),
        AIT_SIZE("model.mlp_dim", model.mlp_dim),
        AIT_SIZE("model.memory_slots", model.memory_slots),
        AIT_SIZE("model.slot_dim", model.slot_dim),
        AIT_SIZE("model.bottleneck_heads", model.bottleneck_heads),
        AIT_SIZE("model.bottleneck_size", model.bottleneck_size),
        AIT_SCALAR("model.beta", model.beta),
        Field{"model.memory_init",
              [](TrainConfig& c, std::string_view v) { c.model.memory_init = parse_memory_init(v); },
              [](const TrainConfig& c) { return std::string(to_string(c.model.memory_init)); }},
        Field{"model.norm_scope", [](TrainConfig& c, std::string_view v) { c.model.norm_scope = parse_norm_scope(v); },
              [](const TrainConfig& c) { return std::string(to_string(c.model.norm_scope)); }},
        Field{"model.topk_scope", [](TrainConfig& c, std::string_view v) { c.model.topk_scope = parse_topk_scope(v); },
              [](const TrainConfig& c) { return std::string(to_string(c.model.topk_scope)); }},
        AIT_SIZE("model.hopfield_iters", model.hopfield_iters),
        AIT_DOUBLE("model.hopfield_tol", model.hopfield_tol),
        Field{"model.norm_placement",
              [](TrainConfig& c, std::string_view v) {
                  if (v == "pre") {
                      c.model.norm_placement = NormPlacement::pre;
                  } else if (v == "post") {
                      c.model.norm_placement = NormPlacement::post;
                  } else {
                      throw ConfigError("model.norm_placement must be pre or post, got '" + std::string(v) + "'");
                  }
              },
              [](const TrainConfig& c) {
                  return std::string(c.model.norm_placement == NormPlacement::pre ? "pre" : "post");
              }},
        AIT_SIZE("model.classes", model.classes),
        AIT_BOOL("ablation.use_memory", ablation.use_memory),
        AIT_BOOL("ablation.use_hopfield", ablation.use_hopfield),
        AIT_BOOL("ablation.use_bottleneck", ablation.use_bottleneck),
        AIT_BOOL("ablation.use_sa", ablation.use_sa),
        AIT_BOOL("ablation.use_ff", ablation.use_ff),
        AIT_BOOL("ablation.reset_memory_each_epoch", ablation.reset_memory_each_epoch),
        Field{"optimizer.name",
              [](TrainConfig&, std::string_view v) {
                  if (v != "adamw") throw ConfigError("only optimizer.name = adamw is supported");
              },
              [](const TrainConfig&) { return std::string("adamw"); }},
        AIT_DOUBLE("optimizer.lr", optimizer.lr),
        AIT_DOUBLE("optimizer.weight_decay", optimizer.weight_decay),
        AIT_DOUBLE("optimizer.beta1", optimizer.beta1),
        AIT_DOUBLE("optimizer.beta2", optimizer.beta2),
        AIT_DOUBLE("optimizer.eps", optimizer.eps),
        AIT_BOOL("schedule.cosine", schedule.cosine),
        AIT_SIZE("schedule.warmup_epochs", schedule.warmup_epochs),
        AIT_SIZE("schedule.epochs", schedule.epochs),
        AIT_DOUBLE("schedule.min_lr", schedule.min_lr),
        AIT_DOUBLE("schedule.warmup_start_lr", schedule.warmup_start_lr),
        AIT_DOUBLE("loss.sigma", loss.sigma),
        AIT_DOUBLE("loss.epsilon", loss.epsilon),
        AIT_DOUBLE("loss.alpha", loss.alpha),
        Field{"loss.layer_reduction",
              [](TrainConfig& c, std::string_view v) {
                  if (v == "sum") {
                      c.loss.layer_reduction = LayerReduction::sum;
                  } else if (v == "mean") {
                      c.loss.layer_reduction = LayerReduction::mean;
                  } else {
                      throw ConfigError("loss.layer_reduction must be sum or mean, got '" + std::string(v) + "'");
                  }
              },
              [](const TrainConfig& c) {
                  return std::string(c.loss.layer_reduction == LayerReduction::sum ? "sum" : "mean");
              }},
        Field{"loss.importance",
              [](TrainConfig& c, std::string_view v) { c.loss.importance = parse_importance_source(v); },
              [](const TrainConfig& c) { return std::string(to_string(c.loss.importance)); }},
        AIT_STRING("data.train", data.train_path),
        AIT_STRING("data.test", data.test_path),
        AIT_STRING("data.generator", data.generator),
        AIT_SIZE("data.train_count", data.train_count),
        AIT_SIZE("data.test_count", data.test_count),
        AIT_SIZE("data.side", data.side),
        AIT_U64("data.seed", data.data_seed),
        AIT_SIZE("data.batch_size", data.batch_size),
        AIT_SIZE("data.patch_size", data.patch_size),
        AIT_BOOL("data.hflip", data.hflip),
        AIT_BOOL("data.normalize", data.normalize),
        AIT_DOUBLE("data.mean", data.mean),
        AIT_DOUBLE("data.std", data.stddev),
        AIT_STRING("output.dir", output.dir),
        AIT_STRING("output.metrics", output.metrics),
        AIT_SIZE("output.max_steps", output.max_steps),
        AIT_BOOL("output.checkpoint_each_epoch", output.checkpoint_each_epoch),
    };
    return table;
}

#undef AIT_SIZE
#undef AIT_U64
#undef AIT_DOUBLE
#undef AIT_SCALAR
#undef AIT_BOOL
#undef AIT_STRING

}  // namespace

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(model.layers >= 1, "model.layers must be >= 1");
    require(model.embed_dim >= 1, "model.embed_dim must be >= 1");
    require(model.heads >= 1 && model.embed_dim % model.heads == 0,
            "model.embed_dim must be divisible by model.heads");
    require(model.mlp_dim >= 1, "model.mlp_dim must be >= 1");
    require(model.memory_slots >= 1 && model.slot_dim >= 1, "memory needs slots >= 1 and slot_dim >= 1");
    require(model.bottleneck_heads >= 1, "model.bottleneck_heads must be >= 1");
    require(model.bottleneck_size >= 1, "model.bottleneck_size must be >= 1");
    require(model.beta > 0, "model.beta must be > 0");
    require(model.hopfield_iters >= 1, "model.hopfield_iters must be >= 1");
    require(!ablation.use_hopfield || ablation.use_memory, "ablation.use_hopfield requires ablation.use_memory");
    require(!ablation.use_bottleneck || ablation.use_memory, "ablation.use_bottleneck requires ablation.use_memory");
    require(!ablation.reset_memory_each_epoch || ablation.use_memory,
            "ablation.reset_memory_each_epoch requires ablation.use_memory");
    require(optimizer.lr > 0, "optimizer.lr must be > 0");
    require(optimizer.weight_decay >= 0, "optimizer.weight_decay must be >= 0");
    require(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1,
            "optimizer betas must lie in [0, 1)");
    require(schedule.epochs >= 1, "schedule.epochs must be >= 1");
    require(schedule.warmup_epochs <= schedule.epochs, "schedule.warmup_epochs exceeds schedule.epochs");
    require(schedule.min_lr >= 0 && schedule.min_lr <= optimizer.lr, "schedule.min_lr must lie in [0, optimizer.lr]");
    require(loss.sigma >= 0, "loss.sigma must be >= 0");
    require(loss.epsilon > 0, "loss.epsilon must be > 0");
    require(loss.alpha > 0 && loss.alpha < 1, "loss.alpha must lie in (0, 1)");
    require(data.batch_size >= 1, "data.batch_size must be >= 1");
    require(data.patch_size >= 1, "data.patch_size must be >= 1");
    require(data.stddev > 0, "data.std must be > 0");
    require(!data.train_path.empty() || data.generator == "triangle" || data.generator == "two-blob",
            "data.generator must be triangle or two-blob when data.train is unset");
}

void apply_override(TrainConfig& cfg, std::string_view key, std::string_view value) {
    key = trim(key);
    value = trim(value);
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_override(TrainConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

TrainConfig parse_config(std::string_view text) {
    TrainConfig cfg;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_override(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

}  // namespace ait
