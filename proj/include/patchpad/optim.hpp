#pragma once

#include "patchpad/autodiff.hpp"

#include <cstddef>
#include <vector>

namespace patchpad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    // Decoupled: p <- p - lr*wd*p applied next to the moment update.
    // Coupled: wd*p is added to the gradient before the moments see it.
    bool decoupled = true;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
public:
    Adam(std::vector<ad::Parameter*> params, AdamConfig cfg);

    /// Applies one update from the accumulated gradients; does not clear them.
    void step(double lr);
    void zero_grad();

    long steps() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return cfg_; }
    const ad::Tensor& first_moment(std::size_t i) const { return m_[i]; }
    const ad::Tensor& second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<ad::Parameter*> params_;
    AdamConfig cfg_;
    std::vector<ad::Tensor> m_, v_;
    long step_ = 0;
};

/// Linear warm-up from 0 to `initial`, then cosine annealing to `final`.
/// Steps are optimizer updates; update k (0-based) uses at(k + 1).
struct LrSchedule {
    double initial = 1.25e-4;
    double final = 1.25e-5;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    static LrSchedule from_epochs(double initial, double final, std::size_t warmup_epochs, std::size_t total_epochs,
                                  std::size_t steps_per_epoch);

    double at(std::size_t step) const;
};

}  // namespace patchpad
