#pragma once

#include <functional>

#include "plkrf/tensor.hpp"

namespace plkrf {

// Scalar-valued function of one tensor. Must be re-runnable: grad_check calls
// it once under a tape and twice per coordinate for central differences.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the taped gradient of f at x against central finite differences
// with per-coordinate step h = h_scale * (1 + |x_i|). Returns the max over
// coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
// Throws NumericError when f(x) is not finite. x is restored exactly.
double grad_check(const ScalarFn& f, Tensor& x, double h_scale = 1e-6);

}  // namespace plkrf
