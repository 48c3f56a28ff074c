#include "prdlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prdlab/error.hpp"

namespace prdlab {

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw InvalidArgument("finite_diff_grad: step must lie in (0, 1e-2]");
  NoGradGuard no_grad;
  std::vector<double> point(x.data().begin(), x.data().end());
  std::vector<double> grad(point.size());
  auto eval = [&]() {
    const double v = f(Tensor::from(x.shape(), point));
    if (!std::isfinite(v)) throw RuntimeError("finite_diff_grad: non-finite function value");
    return v;
  };
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double saved = point[k];
    point[k] = saved + h;
    const double plus = eval();
    point[k] = saved - h;
    const double minus = eval();
    point[k] = saved;
    grad[k] = (plus - minus) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(grad));
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) throw InvalidArgument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace prdlab
