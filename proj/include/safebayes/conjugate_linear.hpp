#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string_view>
#include <variant>

namespace safebayes {

/// Known noise variance sigma^2.
struct FixedVariance {
  double sigma2 = 1.0;
};

/// Inverse-gamma prior on sigma^2 with density
/// sigma^{-2(a+1)} exp(-b / sigma^2) b^a / Gamma(a).
struct InverseGammaVariance {
  double shape = 1.0;  // a0
  double scale = 1.0;  // b0
};

using VarianceSpec = std::variant<FixedVariance, InverseGammaVariance>;

void validate(const VarianceSpec& v);

/// Which closed form the inverse-gamma scale b follows after absorbing data.
///
/// `paper`: b0 + (eta/2) * sum_i (y_i - x_i mean)^2, the residual form.
/// `exact`: the scale of (likelihood)^eta x prior integrated exactly, which
/// adds (1/2) (mean - beta0)' Sigma0^{-1} (mean - beta0) to the residual form.
enum class BFormula { paper, exact };

std::string_view to_string(BFormula f);

/// beta | sigma^2 ~ N(mean, sigma^2 covariance), plus the variance prior.
struct ConjugatePrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  VarianceSpec variance;

  /// Model order p; the coefficient vector has p + 1 entries.
  int order() const { return static_cast<int>(mean.size()) - 1; }
  /// Throws DimensionError / NumericalError unless covariance is symmetric
  /// positive definite with matching size and the variance spec is valid.
  void validate() const;
};

/// beta0 = 0, Sigma0 = scale * I_{p+1}.
ConjugatePrior isotropic_prior(int order, double scale, const VarianceSpec& variance);

/// Per-point quantities shared by every loss and by the update:
/// u = Sigma x, leverage s = x' Sigma x, residual r = y - x' mean.
struct PredictiveTerms {
  Eigen::VectorXd u;
  double leverage = 0.0;
  double residual = 0.0;
};

/// One-step prediction losses (nats, except `square`).
struct LossRecord {
  double bayes_log = 0.0;  ///< -log of the eta-generalized predictive density
  double r_log = 0.0;      ///< posterior-expected log-loss
  double i_log = 0.0;      ///< log-loss at the posterior mean parameters; NaN if a <= 1
  double square = 0.0;     ///< (y - x' mean)^2
  double mix = 0.0;        ///< -(1/eta') log E[f^eta']
  double delta = 0.0;      ///< r_log - mix
};

struct PosteriorSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  ///< Lambda^{-1}; the coefficient covariance is sigma^2 times this
  std::optional<double> sigma2;  ///< b/(a-1) (or the fixed sigma^2); empty when a <= 1
  double shape = 0.0;
  double scale = 0.0;
};

struct PredictiveMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Conjugate posterior of one linear model M_p under the eta-generalized
/// likelihood (likelihood^eta x prior).
///
/// The precision is Lambda = Sigma0^{-1} + eta X'X. Its inverse is kept up to
/// date by Sherman-Morrison rank-one updates and recomputed from the Gram
/// accumulators by a Cholesky factorization every `kRefactorInterval` points.
/// eta = 0 is accepted and leaves the posterior at the prior.
class PosteriorState {
 public:
  static constexpr int kRefactorInterval = 64;

  PosteriorState(ConjugatePrior prior, double eta, BFormula formula = BFormula::paper);

  int order() const { return prior_.order(); }
  Eigen::Index dim() const { return prior_.mean.size(); }
  double eta() const { return eta_; }
  long count() const { return count_; }
  BFormula b_formula() const { return formula_; }
  const ConjugatePrior& prior() const { return prior_; }

  bool has_fixed_variance() const { return std::holds_alternative<FixedVariance>(prior_.variance); }
  /// Only meaningful when has_fixed_variance().
  double fixed_sigma2() const;

  const Eigen::VectorXd& mean() const { return mean_; }
  /// Sigma_{n,eta} = Lambda^{-1}.
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  Eigen::MatrixXd precision() const;

  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::VectorXd& cross_moment() const { return cross_; }
  double response_sum_squares() const { return yy_; }

  /// a = a0 + eta n / 2. NaN for fixed variance.
  double shape() const;
  /// b according to b_formula(). NaN for fixed variance.
  double scale() const;
  double scale_paper() const;
  double scale_exact() const;
  /// b/(a-1) for inverse-gamma, sigma^2 for fixed variance, empty when a <= 1.
  std::optional<double> sigma2_mean() const;

  /// Throws DimensionError if x has the wrong size or x[0] != 1, NumericalError
  /// on non-finite input.
  PredictiveTerms terms(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const;

  void update(const Eigen::Ref<const Eigen::VectorXd>& x, double y);
  /// Update reusing terms(x, y) computed on the current state.
  void update(const Eigen::Ref<const Eigen::VectorXd>& x, double y, const PredictiveTerms& t);

  /// Recompute covariance and mean from the Gram accumulators.
  void refactor();

  /// log of integral f(y^n | x^n, theta)^eta dPrior(theta) for the absorbed
  /// data (exact integration, independent of b_formula).
  double log_tempered_marginal() const;

 private:
  void check_point(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const;
  void refresh_scales();

  ConjugatePrior prior_;
  double eta_;
  BFormula formula_;
  Eigen::MatrixXd prior_precision_;
  Eigen::VectorXd prior_shift_;  // Sigma0^{-1} beta0
  double prior_log_det_ = 0.0;    // log det Sigma0

  long count_ = 0;
  int since_refactor_ = 0;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd cross_;
  double yy_ = 0.0;
  Eigen::MatrixXd covariance_;
  Eigen::VectorXd mean_;
  double scale_paper_ = 0.0;
  double scale_exact_ = 0.0;
};

PosteriorSummary posterior_summary(const PosteriorState& state);

/// R-log-loss E_posterior[-log f_theta(y|x)] from precomputed terms.
double r_log_loss(const PosteriorState& state, const PredictiveTerms& t);
/// -log f(y | x, mean, sigma2_mean). NaN when the posterior mean of sigma^2 is undefined.
double i_log_loss(const PosteriorState& state, const PredictiveTerms& t);
/// log E_posterior[f_theta(y|x)^eta_flat]. eta_flat = 1 gives the log predictive density.
double log_tempered_evidence(const PosteriorState& state, const PredictiveTerms& t,
                             double eta_flat);

/// The variance part of a posterior: fixed sigma^2, or inverse-gamma (a, b).
struct VariancePosterior {
  bool fixed = false;
  double sigma2 = 0.0;
  double shape = 0.0;
  double scale = 0.0;
};

VariancePosterior variance_posterior(const PosteriorState& state);

/// Same as above for a posterior given only by its variance part, the
/// leverage x' Sigma x and the residual y - x' mean.
double log_tempered_evidence(const VariancePosterior& v, double leverage, double residual,
                             double eta_flat);

/// Every per-step loss for predicting (x, y) from `state` at flattening exponent eta_flat.
LossRecord step_losses(const PosteriorState& state, const Eigen::Ref<const Eigen::VectorXd>& x,
                       double y, double eta_flat);

/// Mean and variance of Y when theta is drawn from the posterior and Y from P_theta(.|x).
/// Throws VarianceUndefined for an inverse-gamma posterior with a <= 1.
PredictiveMoments predictive_moments(const PosteriorState& state,
                                     const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace safebayes
