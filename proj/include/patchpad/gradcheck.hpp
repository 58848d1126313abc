#pragma once

#include "patchpad/autodiff.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace patchpad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
};

/// Central-difference check of a scalar graph against its reverse-mode
/// gradient. `build` must create the graph on the given tape, binding each
/// entry of `params` through Tape::param, and return the scalar output.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckResult finite_diff_check(const std::function<ad::Var(ad::Tape&)>& build,
                                  const std::vector<ad::Parameter*>& params, double h = 1e-5);

}  // namespace patchpad
