#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "vc4d/tensor.hpp"

namespace vc4d {

// Central finite-difference check of analytic gradients, double precision.
// `loss` re-evaluates the scalar objective from the current tensor contents;
// each entry pairs a tensor to perturb with its analytic gradient. Returns the
// maximum over all coordinates of |analytic - numeric| / max(|a|, |n|, 1e-8).
inline double grad_check(
    const std::function<double()>& loss,
    const std::vector<std::pair<Tensor<double>*, const Tensor<double>*>>& checks,
    double eps = 1e-5) {
    double max_rel_error = 0.0;
    for (const auto& [value, analytic] : checks) {
        for (std::size_t i = 0; i < value->size(); ++i) {
            const double original = (*value)[i];
            (*value)[i] = original + eps;
            const double plus = loss();
            (*value)[i] = original - eps;
            const double minus = loss();
            (*value)[i] = original;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = (*analytic)[i];
            const double rel = std::fabs(a - numeric) /
                               std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_rel_error = std::max(max_rel_error, rel);
        }
    }
    return max_rel_error;
}

}  // namespace vc4d
