#pragma once

#include <functional>
#include <span>
#include <vector>

#include "prdlab/tensor.hpp"

namespace prdlab {

using ScalarFunction = std::function<double(const Tensor&)>;

// Central-difference gradient (f(x + h e_k) - f(x - h e_k)) / 2h for every
// coordinate k of x. f is evaluated on fresh, untracked copies of x.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h = 1e-5);

// Gradient comparisons use |a - b| / max(|a|, |b|, floor). The floor keeps
// coordinates whose true derivative is ~0 from dividing rounding noise by
// rounding noise.
inline constexpr double kRelativeErrorFloor = 1e-3;

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = kRelativeErrorFloor);

}  // namespace prdlab
