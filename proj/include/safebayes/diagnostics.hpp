#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "safebayes/conjugate_linear.hpp"
#include "safebayes/ground_truth.hpp"
#include "safebayes/model_space.hpp"

namespace safebayes {

/// Cumulative losses after some number of steps.
struct LedgerTotals {
  long steps = 0;
  double bayes_log = 0.0;
  double r_log = 0.0;
  double i_log = 0.0;       ///< over steps where the in-model loss is defined
  long i_log_undefined = 0; ///< steps skipped in i_log
  double square = 0.0;
  double mix = 0.0;         ///< cumulative mix loss CML
  double delta = 0.0;       ///< cumulative mixability gap
  double optimal_log = 0.0; ///< cumulative log-loss of the pseudo-truth (NaN if unknown)
};

/// Per-step loss records with running totals.
///
/// totals(k) is the sum over the first k steps, so sums over any step window
/// cost O(1).
class LossLedger {
 public:
  LossLedger() : prefix_(1) {}

  /// optimal_log_loss is -log f(y | x, pseudo-truth); pass NaN when no
  /// closed-form pseudo-truth is available, which disables the margin.
  void add(const LossRecord& record, double optimal_log_loss);

  long size() const { return static_cast<long>(records_.size()); }
  const std::vector<LossRecord>& records() const { return records_; }
  const LedgerTotals& totals() const { return prefix_.back(); }
  const LedgerTotals& totals(long steps) const;

  /// K = sum(-log f_pseudo-truth) - sum(bayes_log); empty when unknown.
  std::optional<double> hypercompression_margin() const { return margin(size()); }
  std::optional<double> margin(long steps) const;

 private:
  std::vector<LossRecord> records_;
  std::vector<LedgerTotals> prefix_;
};

void update_ledger(LossLedger& ledger, const LossRecord& record, double optimal_log_loss);

/// Square-risk of a predictor divided by its own expected predictive variance.
double overconfidence_ratio(double square_risk, double expected_predictive_variance);
/// Full-ensemble version: mixture coefficients against the mixture predictive.
double overconfidence_ratio(const Generator& gen, const ModelEnsemble& ensemble);

struct BernoulliLevel {
  int n = 0;
  double prob_abs_l_large = 0.0;  ///< P(|L| > sqrt(n)/2)
  double prob_l_negative = 0.0;   ///< P(L < 0)
  double prob_l_nonpositive = 0.0;  ///< P(L <= 0)
  double mean_abs_l = 0.0;
  double mean_gap = 0.0;          ///< mean cumulative mixability gap after n steps
  double mean_l = 0.0;
};

struct BernoulliToyResult {
  double theta_star = 0.5;
  long trials = 0;
  std::vector<BernoulliLevel> levels;
  /// Steps where the gap expected under theta_star exceeded 2(e-2) times the
  /// smaller posterior mass, out of bound_checks steps.
  long bound_violations = 0;
  /// Steps where the realized gap exceeded the same bound.
  long realized_bound_violations = 0;
  long bound_checks = 0;
  /// Largest realized gap / min posterior over steps with min posterior <= 0.01.
  double max_realized_ratio = 0.0;
  /// Largest expected gap / min posterior over the same steps.
  double max_expected_ratio = 0.0;
  /// Trials where L differed from 2 (n1 - n0) (always 0 unless broken).
  long l_identity_failures = 0;
};

/// One step of the two-point Bernoulli model {0.2, 0.8} with uniform prior.
struct BernoulliStep {
  double min_posterior = 0.0;  ///< before observing the outcome
  double gap = 0.0;            ///< realized r_log - bayes_log for the outcome
  double expected_gap = 0.0;   ///< under theta_star
};

/// L is the log2 likelihood ratio 0.8 vs 0.2 of the data seen so far.
BernoulliStep bernoulli_step(long l_bits, int outcome, double theta_star);

BernoulliToyResult bernoulli_toy(double theta_star, const std::vector<int>& n_list, long trials,
                                 std::uint64_t seed, int threads = 1);

}  // namespace safebayes
