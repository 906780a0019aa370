#pragma once

#include "fsprompt/tensor.hpp"

#include <functional>
#include <span>
#include <string>

namespace fsprompt {

// Central-difference estimate of d loss / d param, one coordinate at a time.
// `loss_fn` must be deterministic and return a 1 x 1 tensor; it is evaluated
// with the parameter perturbed in place and the value restored afterwards.
Tensor finite_diff_grad(const std::function<Tensor()>& loss_fn, Tensor param, double eps);

struct GradComparison {
    bool ok = true;
    std::size_t worst_index = 0;
    double worst_excess = 0.0;  // max over elements of |a-n| - (atol + rtol*|n|)
    double max_abs_error = 0.0;
    std::string describe() const;
};

// Element passes when |analytic - numeric| <= atol + rtol * |numeric|.
GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double rtol,
                                 double atol);

}  // namespace fsprompt
