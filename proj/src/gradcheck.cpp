#include "dan/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace dan {

Eigen::ArrayXd finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                Tensor x, double eps) {
  if (eps <= 0) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double hi = f(x);
    x.data()[i] = saved - eps;
    const double lo = f(x);
    x.data()[i] = saved;
    out[i] = (hi - lo) / (2.0 * eps);
  }
  return out;
}

double max_relative_error(const Eigen::ArrayXd& analytic,
                          const Eigen::ArrayXd& numeric, double floor) {
  if (analytic.size() != numeric.size())
    throw std::invalid_argument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::abs(numeric[i]), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace dan
