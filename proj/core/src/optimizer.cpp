#include "ait/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "ait/error.hpp"

namespace ait {

LrSchedule::LrSchedule(double base_lr, const ScheduleConfig& cfg, std::size_t steps_per_epoch)
    : base_(base_lr),
      min_(cfg.min_lr),
      start_(cfg.warmup_start_lr),
      cosine_(cfg.cosine),
      warmup_(cfg.warmup_epochs * steps_per_epoch),
      total_(cfg.epochs * steps_per_epoch) {
    if (steps_per_epoch == 0) throw ConfigError("schedule needs at least one step per epoch");
}

double LrSchedule::operator()(std::size_t step) const {
    if (step < warmup_) {
        return start_ + (base_ - start_) * static_cast<double>(step) / static_cast<double>(warmup_);
    }
    if (!cosine_) return base_;
    if (step + 1 >= total_) return min_;
    const double span = static_cast<double>(total_ - 1 - warmup_);
    const double progress = static_cast<double>(step - warmup_) / span;
    return min_ + 0.5 * (base_ - min_) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void AdamW::step(double lr) {
    ++steps_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * m[j] + (1 - b1) * gj;
            const double vj = b2 * v[j] + (1 - b2) * gj * gj;
            m[j] = static_cast<Scalar>(mj);
            v[j] = static_cast<Scalar>(vj);
            const double update = (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps) + cfg_.weight_decay * w[j];
            w[j] = static_cast<Scalar>(w[j] - lr * update);
        }
    }
}

}  // namespace ait
