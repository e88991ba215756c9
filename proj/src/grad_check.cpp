#include "cpmt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cpmt/errors.hpp"

namespace cpmt {

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params, double h) {
    if (!(h > 0.0 && h <= 1e-2)) throw ParameterError("grad_check step h must be in (0, 1e-2]");

    for (auto& p : params) {
        p.mutable_grad();
        p.zero_grad();
    }
    {
        Tensor y = loss();
        if (!std::isfinite(y.item())) throw NumericError("grad_check: loss is not finite at the base point");
        y.backward();
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].mutable_data();
        auto grad = params[pi].grad();
        for (std::size_t e = 0; e < values.size(); ++e) {
            const double saved = values[e];
            values[e] = saved + h;
            const double up = loss().item();
            values[e] = saved - h;
            const double down = loss().item();
            values[e] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss probing parameter " + std::to_string(pi) +
                                   " element " + std::to_string(e));
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad.empty() ? 0.0 : grad[e];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.param_index = pi;
                result.element = e;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    return result;
}

}  // namespace cpmt
