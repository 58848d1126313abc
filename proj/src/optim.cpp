#include "patchpad/optim.hpp"

#include "patchpad/error.hpp"

#include <algorithm>
#include <cmath>

namespace patchpad {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
        m_.push_back(ad::Tensor::zeros_like(p->value));
        v_.push_back(ad::Tensor::zeros_like(p->value));
        if (!p->grad.same_shape(p->value)) p->grad = ad::Tensor::zeros_like(p->value);
    }
}

void Adam::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& w = params_[k]->value.vec();
        const auto& g = params_[k]->grad.vec();
        auto& m = m_[k].vec();
        auto& v = v_[k].vec();
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gi = g[i];
            if (!cfg_.decoupled) gi += cfg_.weight_decay * w[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            if (cfg_.decoupled) w[i] -= lr * cfg_.weight_decay * w[i];
            w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

LrSchedule LrSchedule::from_epochs(double initial, double final, std::size_t warmup_epochs, std::size_t total_epochs,
                                   std::size_t steps_per_epoch) {
    if (total_epochs == 0 || steps_per_epoch == 0) throw invalid_argument("schedule needs at least one step");
    if (warmup_epochs > total_epochs) throw invalid_argument("warm-up longer than training");
    return {initial, final, warmup_epochs * steps_per_epoch, total_epochs * steps_per_epoch};
}

double LrSchedule::at(std::size_t step) const {
    step = std::min(step, total_steps);
    if (step < warmup_steps) return initial * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step == warmup_steps || total_steps == warmup_steps) return initial;
    const double tau = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    if (tau >= 1.0) return final;
    return final + 0.5 * (initial - final) * (1.0 + std::cos(M_PI * tau));
}

}  // namespace patchpad
