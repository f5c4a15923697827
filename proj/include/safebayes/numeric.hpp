#pragma once

#include <Eigen/Core>
#include <numbers>

namespace safebayes {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Digamma function for x > 0. Upward recurrence to x >= 8 followed by the
/// asymptotic series; absolute error below 1e-12 on (0, inf).
double digamma(double x);

/// log(sum(exp(v))) computed stably. Returns -inf for an empty vector or when
/// every entry is -inf.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

/// First index attaining the minimum of `values` under exact comparison.
/// Eta grids are stored in decreasing order, so this is the largest minimizer.
std::size_t first_argmin(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace safebayes
