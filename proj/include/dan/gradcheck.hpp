#pragma once

#include "dan/tensor.hpp"

#include <functional>

namespace dan {

/// Central-difference gradient estimate (f(x+eps) - f(x-eps)) / 2eps per
/// element. `f` must be a deterministic scalar function of x's data; the
/// tensor is restored on return. Independent of the autodiff tape.
Eigen::ArrayXd finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                Tensor x, double eps = 1e-5);

/// Max over elements of |analytic - numeric| / max(|numeric|, floor).
double max_relative_error(const Eigen::ArrayXd& analytic,
                          const Eigen::ArrayXd& numeric,
                          double floor = 1e-6);

}  // namespace dan
