#include "safebayes/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "safebayes/errors.hpp"
#include "safebayes/random.hpp"

namespace safebayes {

void LossLedger::add(const LossRecord& record, double optimal_log_loss) {
  LedgerTotals t = prefix_.back();
  ++t.steps;
  t.bayes_log += record.bayes_log;
  t.r_log += record.r_log;
  if (std::isnan(record.i_log)) {
    ++t.i_log_undefined;
  } else {
    t.i_log += record.i_log;
  }
  t.square += record.square;
  t.mix += record.mix;
  t.delta += record.delta;
  t.optimal_log += optimal_log_loss;
  records_.push_back(record);
  prefix_.push_back(t);
}

const LedgerTotals& LossLedger::totals(long steps) const {
  if (steps < 0 || steps > size()) throw DimensionError("ledger step index out of range");
  return prefix_[static_cast<std::size_t>(steps)];
}

std::optional<double> LossLedger::margin(long steps) const {
  const auto& t = totals(steps);
  if (std::isnan(t.optimal_log)) return std::nullopt;
  return t.optimal_log - t.bayes_log;
}

void update_ledger(LossLedger& ledger, const LossRecord& record, double optimal_log_loss) {
  ledger.add(record, optimal_log_loss);
}

double overconfidence_ratio(double square_risk, double expected_predictive_variance) {
  if (!(expected_predictive_variance > 0.0)) {
    throw NumericalError("self-assessed predictive variance must be positive");
  }
  return square_risk / expected_predictive_variance;
}

double overconfidence_ratio(const Generator& gen, const ModelEnsemble& ensemble) {
  return overconfidence_ratio(square_risk(gen, ensemble.mixture_coefficients()),
                              ensemble.expected_predictive_variance(covariate_second_moments(gen)));
}

namespace {

constexpr double kLogFour = 1.3862943611198906188;

// Gap for a posterior with mass m on the minority element, whose log-loss
// exceeds the majority's by d.
double two_point_gap(double m, double d) { return m * d + std::log1p(m * std::expm1(-d)); }

struct TrialOutcome {
  std::vector<long> l;
  std::vector<double> gap;
  long violations = 0;
  long realized_violations = 0;
  long checks = 0;
  double max_realized = 0.0;
  double max_expected = 0.0;
  bool identity_ok = true;
};

}  // namespace

BernoulliStep bernoulli_step(long l_bits, int outcome, double theta_star) {
  BernoulliStep s;
  // Mass on the element the data currently disfavour.
  s.min_posterior = 1.0 / (1.0 + std::exp2(static_cast<double>(std::abs(l_bits))));
  // Majority is 0.8 when L > 0 (either one when L = 0). The minority wins the
  // outcome that favours it, so its loss is lower by log 4; otherwise higher.
  const bool majority_high = l_bits >= 0;
  auto gap_for = [&](int y) {
    const bool minority_wins = majority_high ? (y == 0) : (y == 1);
    return two_point_gap(s.min_posterior, minority_wins ? -kLogFour : kLogFour);
  };
  s.gap = gap_for(outcome);
  s.expected_gap = theta_star * gap_for(1) + (1.0 - theta_star) * gap_for(0);
  return s;
}

BernoulliToyResult bernoulli_toy(double theta_star, const std::vector<int>& n_list, long trials,
                                 std::uint64_t seed, int threads) {
  if (!(theta_star >= 0.0 && theta_star <= 1.0)) {
    throw NumericalError("theta_star must lie in [0, 1]");
  }
  if (trials < 1) throw NumericalError("need at least one trial");
  if (n_list.empty()) throw DimensionError("n_list is empty");
  std::vector<int> levels = n_list;
  for (int n : levels) {
    if (n < 1) throw DimensionError("sample sizes must be positive");
  }
  const int n_max = *std::max_element(levels.begin(), levels.end());
  const double bound = 2.0 * (std::numbers::e - 2.0);
  const double log2_ratio_one = std::log2(0.8 / 0.2);
  const double log2_ratio_zero = std::log2(0.2 / 0.8);

  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(trials));
  auto run_trial = [&](long t) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(t)));
    TrialOutcome& out = outcomes[static_cast<std::size_t>(t)];
    std::vector<long> l_at(static_cast<std::size_t>(n_max) + 1);
    std::vector<double> gap_at(static_cast<std::size_t>(n_max) + 1);
    long l = 0;
    long n1 = 0;
    double l_direct = 0.0;
    double cumulative = 0.0;
    for (int i = 1; i <= n_max; ++i) {
      const int y = rng.bernoulli(theta_star) ? 1 : 0;
      const BernoulliStep s = bernoulli_step(l, y, theta_star);
      cumulative += s.gap;
      ++out.checks;
      if (s.expected_gap > bound * s.min_posterior * (1.0 + 1e-12)) ++out.violations;
      if (s.gap > bound * s.min_posterior * (1.0 + 1e-12)) ++out.realized_violations;
      if (s.min_posterior <= 0.01 && s.min_posterior > 0.0) {
        out.max_realized = std::max(out.max_realized, s.gap / s.min_posterior);
        out.max_expected = std::max(out.max_expected, s.expected_gap / s.min_posterior);
      }
      l += y == 1 ? 2 : -2;
      n1 += y;
      l_direct += y == 1 ? log2_ratio_one : log2_ratio_zero;
      l_at[static_cast<std::size_t>(i)] = l;
      gap_at[static_cast<std::size_t>(i)] = cumulative;
    }
    const long n0 = n_max - n1;
    if (l != 2 * (n1 - n0) || std::abs(l_direct - static_cast<double>(l)) > 1e-9) {
      out.identity_ok = false;
    }
    for (int n : levels) {
      out.l.push_back(l_at[static_cast<std::size_t>(n)]);
      out.gap.push_back(gap_at[static_cast<std::size_t>(n)]);
    }
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(trials)));
  if (workers == 1) {
    for (long t = 0; t < trials; ++t) run_trial(t);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (long t = w; t < trials; t += workers) run_trial(t);
      });
    }
    for (auto& th : pool) th.join();
  }

  BernoulliToyResult res;
  res.theta_star = theta_star;
  res.trials = trials;
  res.levels.resize(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k) res.levels[k].n = levels[k];
  for (const auto& out : outcomes) {
    res.bound_violations += out.violations;
    res.realized_bound_violations += out.realized_violations;
    res.bound_checks += out.checks;
    res.max_realized_ratio = std::max(res.max_realized_ratio, out.max_realized);
    res.max_expected_ratio = std::max(res.max_expected_ratio, out.max_expected);
    if (!out.identity_ok) ++res.l_identity_failures;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      auto& lv = res.levels[k];
      const double lval = static_cast<double>(out.l[k]);
      if (std::abs(lval) > std::sqrt(static_cast<double>(lv.n)) / 2.0) lv.prob_abs_l_large += 1.0;
      if (out.l[k] < 0) lv.prob_l_negative += 1.0;
      if (out.l[k] <= 0) lv.prob_l_nonpositive += 1.0;
      lv.mean_abs_l += std::abs(lval);
      lv.mean_l += lval;
      lv.mean_gap += out.gap[k];
    }
  }
  const double tr = static_cast<double>(trials);
  for (auto& lv : res.levels) {
    lv.prob_abs_l_large /= tr;
    lv.prob_l_negative /= tr;
    lv.prob_l_nonpositive /= tr;
    lv.mean_abs_l /= tr;
    lv.mean_l /= tr;
    lv.mean_gap /= tr;
  }
  return res;
}

}  // namespace safebayes
