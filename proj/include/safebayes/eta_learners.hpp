#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string_view>
#include <vector>

#include "safebayes/conjugate_linear.hpp"
#include "safebayes/diagnostics.hpp"
#include "safebayes/ground_truth.hpp"
#include "safebayes/model_space.hpp"

namespace safebayes {

struct EtaGridSpec {
  double kappa_step = 1.0 / 3.0;
  int kappa_max = 8;
  bool include_gt1 = false;
};

/// Learning rates 2^{-k kappa_step}, strictly decreasing. Without
/// include_gt1 they run from 1 down to 2^{-kappa_max}; with it from
/// 2^{kappa_max} down to 2^{-kappa_max}.
struct EtaGrid {
  EtaGridSpec spec;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  /// Index of eta == 1 (always present).
  std::size_t index_of_one() const;
};

/// Throws NumericalError unless kappa_step > 0, kappa_max >= 1 and
/// kappa_max is a whole number of steps.
EtaGrid eta_grid(const EtaGridSpec& spec);

/// Per-model conjugate prior: beta0 = 0, Sigma0 = prior_scale * I.
struct ModelConfig {
  int pmax = 50;
  VarianceSpec variance = InverseGammaVariance{1.0, 1.0 / 40.0};
  double prior_scale = 1.0;
  ModelPriorKind model_prior = ModelPriorKind::log_squared;
  BFormula b_formula = BFormula::paper;

  ModelPrior model_space_prior() const { return ModelPrior{model_prior, pmax}; }
  PriorBuilder builder() const;
  ModelEnsemble make_ensemble(double eta) const;
  bool fixed_variance() const { return std::holds_alternative<FixedVariance>(variance); }
};

enum class SafeBayesVariant { r_log, i_log, r_square, i_square };

std::string_view to_string(SafeBayesVariant v);

/// Throws ConfigError when the variant does not fit the variance model:
/// square variants need a fixed variance, log variants an inverse-gamma one.
void check_variant(SafeBayesVariant v, const ModelConfig& model);

struct EtaResult {
  double eta_hat = 1.0;
  std::size_t index = 0;
  Eigen::VectorXd objectives;  ///< one per grid value, grid order
};

/// Choose the largest minimizer of `objectives` over a decreasing grid.
EtaResult select_eta(const EtaGrid& grid, Eigen::VectorXd objectives);

/// Runs one ensemble per learning rate through the data in lockstep and
/// keeps per-step ledgers, so SafeBayes can be evaluated on every prefix.
///
/// Ensemble k predicts with mix losses at eta' = eta_k. An optional
/// pseudo-truth enables the hypercompression margin in each ledger.
class EtaTracker {
 public:
  EtaTracker(const ModelConfig& model, std::vector<double> etas, bool cesaro = false,
             std::optional<PseudoTruth> pseudo_truth = std::nullopt);

  void step(const Eigen::Ref<const Eigen::VectorXd>& x, double y);
  void run(const Dataset& data);

  long count() const { return count_; }
  std::size_t size() const { return etas_.size(); }
  const std::vector<double>& etas() const { return etas_; }
  const ModelConfig& model() const { return model_; }
  const ModelEnsemble& ensemble(std::size_t k) const { return ensembles_.at(k); }
  const LossLedger& ledger(std::size_t k) const { return ledgers_.at(k); }
  /// Throws std::logic_error when Cesaro tracking is off.
  const CesaroState& cesaro(std::size_t k) const;
  bool tracks_cesaro() const { return !cesaro_.empty(); }

  /// Cumulative SafeBayes objective of ensemble k over steps
  /// ceil(discount * steps) .. steps - 1 (0-based).
  double objective(std::size_t k, SafeBayesVariant v, long steps, double discount = 0.0) const;
  /// Cumulative eta-generalized Bayes log-loss of ensemble k over the first `steps` steps.
  double bayes_objective(std::size_t k, long steps) const;

 private:
  ModelConfig model_;
  std::vector<double> etas_;
  std::optional<PseudoTruth> pseudo_truth_;
  std::vector<ModelEnsemble> ensembles_;
  std::vector<LossLedger> ledgers_;
  std::vector<CesaroState> cesaro_;
  long count_ = 0;
};

/// First step excluded from a discounted sum over `steps` steps.
long discount_start(long steps, double discount);

/// SafeBayes over the grid for the whole dataset; ties go to the largest eta.
EtaResult run_safe_bayes(const Dataset& data, const ModelConfig& model, const EtaGrid& grid,
                         SafeBayesVariant variant, double discount_fraction = 0.0);

/// Same, reading the objectives from a tracker that has absorbed at least `steps` points.
EtaResult safe_bayes_from(const EtaTracker& tracker, const EtaGrid& grid,
                          SafeBayesVariant variant, long steps, double discount_fraction = 0.0);

/// Minimizes the cumulative eta-generalized Bayes log-loss.
EtaResult empirical_bayes_eta(const Dataset& data, const ModelConfig& model, const EtaGrid& grid);
EtaResult empirical_bayes_from(const EtaTracker& tracker, const EtaGrid& grid, long steps);

enum class CvLoss { square, predictive_log };

std::string_view to_string(CvLoss loss);

/// Leave-one-out score of an ensemble that has absorbed every point of `data`.
///
/// Each held-out posterior is obtained by a rank-one downdate of the full
/// posterior of every model (refit when the downdate is ill-conditioned),
/// and held-out model weights use the exact tempered marginal likelihoods.
/// Returns the mean loss over the held-out points.
double loo_score(const ModelEnsemble& ensemble, const ModelConfig& model, const Dataset& data,
                 CvLoss loss);

/// LOO cross-validation of eta; `ensembles` (optional) are already fitted to data.
EtaResult cv_eta(const Dataset& data, const ModelConfig& model, const EtaGrid& grid, CvLoss loss);
EtaResult cv_eta_from(const EtaTracker& tracker, const EtaGrid& grid, const Dataset& data,
                      CvLoss loss);

enum class BaselineMethod { aicc, bic, kfold, loo, gcv };

std::string_view to_string(BaselineMethod m);

struct BaselineResult {
  int order = 0;
  Eigen::VectorXd scores;  ///< per order; +inf where the criterion is undefined
};

/// Classical choice of model order. AICc and BIC use maximum likelihood fits
/// with k = p + 2 parameters. The cross-validation schemes and GCV score the
/// eta = 1 posterior-mean predictor of each model under `model`'s prior with
/// square loss; k-fold uses `folds` contiguous blocks. Smallest order wins ties.
BaselineResult baseline_model_selection(const Dataset& data, const ModelConfig& model,
                                        BaselineMethod method, int folds = 10);

}  // namespace safebayes
