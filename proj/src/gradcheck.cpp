#include "fsprompt/gradcheck.hpp"

#include "fsprompt/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace fsprompt {

Tensor finite_diff_grad(const std::function<Tensor()>& loss_fn, Tensor param, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
    auto values = param.mutable_data();
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double original = values[i];
        values[i] = original + eps;
        const Tensor up = loss_fn();
        values[i] = original - eps;
        const Tensor down = loss_fn();
        values[i] = original;
        if (up.numel() != 1 || down.numel() != 1)
            throw ShapeError("finite_diff_grad: loss must be scalar, got " + up.shape().str());
        out[i] = (up.item() - down.item()) / (2.0 * eps);
    }
    return Tensor(param.shape(), std::move(out));
}

GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double rtol,
                                 double atol) {
    if (analytic.size() != numeric.size()) throw ShapeError("compare_gradients: length mismatch");
    GradComparison result;
    result.worst_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double err = std::abs(analytic[i] - numeric[i]);
        const double excess = err - (atol + rtol * std::abs(numeric[i]));
        result.max_abs_error = std::max(result.max_abs_error, err);
        if (excess > result.worst_excess) {
            result.worst_excess = excess;
            result.worst_index = i;
        }
        if (!(excess <= 0.0)) result.ok = false;
    }
    return result;
}

std::string GradComparison::describe() const {
    std::ostringstream os;
    os << (ok ? "ok" : "MISMATCH") << " max_abs_error=" << max_abs_error << " worst_index=" << worst_index
       << " worst_excess=" << worst_excess;
    return os.str();
}

}  // namespace fsprompt
