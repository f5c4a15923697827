#include "safebayes/numeric.hpp"

#include <cmath>
#include <limits>

#include "safebayes/errors.hpp"

namespace safebayes {

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw NumericalError("digamma: argument must be positive and finite");
  }
  double result = 0.0;
  while (x < 8.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number series in 1/x^2, terms up to x^-12.
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return result + std::log(x) - 0.5 * inv - series;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

std::size_t first_argmin(const Eigen::Ref<const Eigen::VectorXd>& values) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] < values[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  }
  return best;
}

}  // namespace safebayes
