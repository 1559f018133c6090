#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ait/config.hpp"
#include "ait/tensor.hpp"

namespace ait {

/// Warmup then cosine decay, evaluated per optimizer step.
///
/// lr(0) = warmup_start_lr, lr(warmup_steps) = base lr, and with cosine on
/// lr(total_steps - 1) = min_lr.
class LrSchedule {
   public:
    LrSchedule(double base_lr, const ScheduleConfig& cfg, std::size_t steps_per_epoch);
    double operator()(std::size_t step) const;
    std::size_t total_steps() const { return total_; }
    std::size_t warmup_steps() const { return warmup_; }

   private:
    double base_;
    double min_;
    double start_;
    bool cosine_;
    std::size_t warmup_;
    std::size_t total_;
};

/// Adam with decoupled weight decay over a fixed, named parameter list.
class AdamW {
   public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, const OptimizerConfig& cfg);

    /// Applies one update from the parameters' gradient buffers at rate lr.
    void step(double lr);
    void zero_grad();

    std::size_t steps() const { return steps_; }
    void set_steps(std::size_t steps) { steps_ = steps; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    /// First and second moment buffers, aligned with params().
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }

   private:
    std::vector<std::pair<std::string, Tensor>> params_;
    OptimizerConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t steps_ = 0;
};

}  // namespace ait
