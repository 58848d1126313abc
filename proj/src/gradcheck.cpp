#include "patchpad/gradcheck.hpp"

#include <cmath>

namespace patchpad {

GradCheckResult finite_diff_check(const std::function<ad::Var(ad::Tape&)>& build,
                                  const std::vector<ad::Parameter*>& params, double h) {
    for (auto* p : params) p->grad = ad::Tensor::zeros_like(p->value);
    {
        ad::Tape tape;
        tape.backward(build(tape));
    }
    auto eval = [&build] {
        ad::Tape tape;
        return build(tape).value()[0];
    };

    GradCheckResult res;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = eval();
            p->value[i] = orig - h;
            const double down = eval();
            p->value[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(p->grad[i] - numeric) / std::max(1.0, std::abs(numeric));
            ++res.coordinates;
            if (err > res.max_rel_error || res.worst_param.empty()) {
                res.max_rel_error = err;
                res.worst_param = p->name;
                res.worst_index = i;
            }
        }
    }
    return res;
}

}  // namespace patchpad
