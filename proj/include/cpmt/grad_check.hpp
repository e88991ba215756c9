#pragma once

#include <functional>
#include <vector>

#include "cpmt/tensor.hpp"

namespace cpmt {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t param_index = 0;  // location of the worst element
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;  // number of scalar entries compared
};

// Compares reverse-mode gradients of the scalar `loss` with central finite
// differences (f(x+h) - f(x-h)) / 2h for every entry of every tensor in
// `params`. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Throws NumericError naming the parameter if a probe is not
// finite, ParameterError if h is outside (0, 1e-2]. Gradient buffers of
// `params` are zeroed on return.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                           double h = 1e-5);

}  // namespace cpmt
