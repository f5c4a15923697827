#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <string_view>

#include "safebayes/random.hpp"

namespace safebayes {

enum class CovariateLaw { gauss, uniform, polynomial };

std::string_view to_string(CovariateLaw law);
CovariateLaw covariate_law_from_string(std::string_view name);

/// Sampling distribution P* of (X, Y).
///
/// With probability 1 - easy_prob a point is regular: X_1..X_pmax follow
/// `law` and Y = intercept_offset + coefficients' x + N(0, noise_variance).
/// With probability easy_prob it is easy: either the fixed point
/// (1, easy_x, ..., easy_x; easy_y), or, when easy_scale is set, a regular
/// point with covariates and noise multiplied by easy_scale.
struct Generator {
  std::string name = "wrong_model";
  CovariateLaw law = CovariateLaw::gauss;
  int pmax = 50;
  Eigen::VectorXd coefficients = (Eigen::VectorXd(5) << 0.0, 0.1, 0.1, 0.1, 0.1).finished();
  double intercept_offset = 0.0;
  double noise_variance = 1.0 / 20.0;
  double easy_prob = 0.5;
  double easy_x = 0.0;
  double easy_y = 0.0;
  std::optional<double> easy_scale;

  /// Throws DimensionError / NumericalError on an inconsistent description.
  void validate() const;
  /// Regression coefficients of the regular points including the offset, padded to pmax + 1.
  Eigen::VectorXd regression_coefficients() const;
};

namespace presets {
/// Half of the points at (0, 0), regular noise variance 1/20.
Generator wrong_model(int pmax);
/// Homoskedastic truth with noise variance 1/40.
Generator correct_model(int pmax);
/// X_j = S^j, S uniform on [-1, 1], Y = noise; half of the points at (0, 0).
Generator polynomial_wrong(int pmax);
Generator polynomial_correct(int pmax);
/// Easy probability 1/4.
Generator fewer_easy(int pmax);
/// Easy points are regular points shrunk by a factor 5.
Generator less_easy(int pmax);
/// Regular Y = noise.
Generator zero_regression(int pmax);
/// Coefficients ten times larger.
Generator large_coefficients(int pmax);
/// Intercept -0.04, easy point (0.2, ..., 0.2; 0.04).
Generator shifted_easy(int pmax);
/// Intercept +0.5, easy point (0; 0.5).
Generator uncentered(int pmax);
/// Lookup by preset name; throws ConfigError for an unknown name.
Generator by_name(std::string_view name, int pmax);
}  // namespace presets

/// Columns are covariate vectors (leading 1, padded to pmax + 1).
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const { return y.size(); }
  Dataset prefix(Eigen::Index n) const;
};

Dataset sample(const Generator& gen, Eigen::Index n, Rng& rng);

struct PseudoTruth {
  int order = 0;
  Eigen::VectorXd coefficients;  ///< length order + 1
  double sigma2 = 0.0;
};

/// E[X X'] over the pmax + 1 padded covariates, including the easy points.
Eigen::MatrixXd covariate_second_moments(const Generator& gen);
/// E[X X'] for regular points only.
Eigen::MatrixXd regular_second_moments(const Generator& gen);

/// KL-optimal (equivalently square-risk optimal) element of the model union.
/// Coefficients below 1e-12 in absolute value at the tail are dropped from the order.
PseudoTruth optimal_params(const Generator& gen);

/// E_{P*}(Y - c' X)^2; c is zero-padded and may have at most pmax + 1 entries.
double square_risk(const Generator& gen, const Eigen::Ref<const Eigen::VectorXd>& c);

/// E_{P*}[-log f(Y | X, c, sigma2)] = square_risk / (2 sigma2) + log(2 pi sigma2) / 2.
double log_risk(const Generator& gen, const Eigen::Ref<const Eigen::VectorXd>& c, double sigma2);

/// -log of the normal density N(y; c' x, sigma2); x may be longer than c.
double point_log_loss(const Eigen::Ref<const Eigen::VectorXd>& c, double sigma2,
                      const Eigen::Ref<const Eigen::VectorXd>& x, double y);

}  // namespace safebayes
