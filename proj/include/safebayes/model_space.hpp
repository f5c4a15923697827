#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "safebayes/conjugate_linear.hpp"

namespace safebayes {

enum class ModelPriorKind { log_squared, uniform, fixed_order };

std::string_view to_string(ModelPriorKind kind);
ModelPriorKind model_prior_kind_from_string(std::string_view name);

/// Prior over the nested orders 0..pmax.
/// log_squared: pi(p) proportional to 1 / ((p + 2) log(p + 2)^2).
/// fixed_order: all mass on pmax (a single ridge-type model).
struct ModelPrior {
  ModelPriorKind kind = ModelPriorKind::log_squared;
  int pmax = 0;

  /// Normalized log prior masses, one per order.
  Eigen::VectorXd log_weights() const;
};

/// Builds the within-model prior for order p.
using PriorBuilder = std::function<ConjugatePrior(int order)>;

struct EnsembleSummary {
  Eigen::VectorXd weights;
  int map_order = 0;
  /// Weight-averaged posterior means, zero-padded to pmax + 1.
  Eigen::VectorXd mixture_coefficients;
  /// Weight-averaged posterior mean of sigma^2; empty if any component has a <= 1.
  std::optional<double> mixture_sigma2;
};

/// Eta-generalized posterior over the union of models M_0..M_pmax.
///
/// Each order keeps its own conjugate posterior; model M_p reads the first
/// p + 1 entries of a covariate vector. Log-weights are kept normalized.
class ModelEnsemble {
 public:
  ModelEnsemble(const ModelPrior& prior, const PriorBuilder& builder, double eta,
                BFormula formula = BFormula::paper);

  int pmax() const { return static_cast<int>(states_.size()) - 1; }
  double eta() const { return eta_; }
  long count() const { return count_; }
  const std::vector<PosteriorState>& states() const { return states_; }
  const Eigen::VectorXd& log_weights() const { return log_weights_; }
  Eigen::VectorXd weights() const { return log_weights_.array().exp(); }

  /// Multiplies each model weight by E_p[f(y|x)^eta] (its tempered
  /// predictive integral), renormalizes, then updates every posterior.
  void advance(const Eigen::Ref<const Eigen::VectorXd>& x, double y);

  /// Losses of predicting (x, y) at flattening exponent eta_flat, then
  /// advance. Equivalent to step_losses followed by advance, sharing the
  /// per-model linear algebra.
  LossRecord advance_with_losses(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                                 double eta_flat);

  /// Across-model losses. r_log is posterior-weighted; bayes_log and mix are
  /// log-mixtures of the per-model integrals; square and i_log are evaluated
  /// at the mixture coefficients and mixture sigma^2 (i_log is NaN when the
  /// latter is undefined).
  LossRecord step_losses(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                         double eta_flat) const;

  EnsembleSummary summary() const;
  /// argmax of the weights, smallest order on exact ties.
  int map_order() const;
  Eigen::VectorXd mixture_coefficients() const;
  std::optional<double> mixture_sigma2() const;

  /// E_X Var_W(Y | X) for the full ensemble, where `moments` = E[X X'].
  /// Throws VarianceUndefined when some component has a <= 1.
  double expected_predictive_variance(const Eigen::MatrixXd& moments) const;
  /// Same, for the posterior conditioned on model `order`.
  double expected_predictive_variance(const Eigen::MatrixXd& moments, int order) const;
  /// Posterior mean of model `order`, zero-padded to pmax + 1.
  Eigen::VectorXd padded_mean(int order) const;

 private:
  void check_point(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  LossRecord combine(const Eigen::Ref<const Eigen::VectorXd>& x, double y, double eta_flat,
                     const std::vector<PredictiveTerms>& terms,
                     Eigen::VectorXd* log_evidence_at_eta) const;

  double eta_;
  long count_ = 0;
  std::vector<PosteriorState> states_;
  Eigen::VectorXd log_weights_;
};

/// Running average of ensemble posteriors after 1..n points (the Cesaro
/// posterior). Stores enough sums to give the averaged regression function
/// and its predictive variance through the law of total variance.
class CesaroState {
 public:
  explicit CesaroState(int pmax);

  /// Absorb the current ensemble posterior. A posterior whose mean variance
  /// is undefined still contributes its regression function but makes the
  /// predictive variance undefined from then on.
  void update(const ModelEnsemble& ensemble);

  long count() const { return count_; }
  bool variance_defined() const { return variance_defined_; }
  /// Mean of the stored mixture regression coefficient vectors.
  Eigen::VectorXd regression() const;
  /// Predictive variance of Y at x under the averaged posterior. Throws
  /// VarianceUndefined when some absorbed posterior had a <= 1.
  double predictive_variance(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// E_X of predictive_variance, with moments = E[X X'].
  double expected_predictive_variance(const Eigen::MatrixXd& moments) const;

 private:
  long count_ = 0;
  bool variance_defined_ = true;
  Eigen::VectorXd sum_coefficients_;
  Eigen::MatrixXd sum_outer_;     // sum_i sum_p w_p m_p m_p'
  Eigen::MatrixXd sum_within_;    // sum_i sum_p w_p s2_p Sigma_p (padded)
  double sum_sigma2_ = 0.0;       // sum_i sum_p w_p s2_p
};

}  // namespace safebayes
