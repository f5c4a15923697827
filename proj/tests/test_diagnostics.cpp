#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "safebayes/diagnostics.hpp"
#include "safebayes/errors.hpp"

using namespace safebayes;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

LossRecord record(double base) {
  LossRecord r;
  r.bayes_log = base;
  r.r_log = base + 0.5;
  r.i_log = base + 0.25;
  r.square = base * base;
  r.mix = base - 0.1;
  r.delta = r.r_log - r.mix;
  return r;
}

// Direct two-point computation of the gap for outcome y after log2-ratio L.
double direct_gap(long l, int y) {
  const double w_high = std::exp2(static_cast<double>(l)) / (1.0 + std::exp2(static_cast<double>(l)));
  const double p_high = y == 1 ? 0.8 : 0.2, p_low = y == 1 ? 0.2 : 0.8;
  const double r = -w_high * std::log(p_high) - (1.0 - w_high) * std::log(p_low);
  const double b = -std::log(w_high * p_high + (1.0 - w_high) * p_low);
  return r - b;
}

}  // namespace

TEST_CASE("ledger prefix sums") {
  LossLedger ledger;
  for (int i = 1; i <= 5; ++i) ledger.add(record(i), -0.5 * i);
  CHECK(ledger.size() == 5);
  CHECK(ledger.totals(0).bayes_log == 0.0);
  CHECK(ledger.totals(3).bayes_log == doctest::Approx(6.0));
  CHECK(ledger.totals(3).r_log == doctest::Approx(7.5));
  CHECK(ledger.totals().square == doctest::Approx(55.0));
  CHECK(ledger.totals().optimal_log == doctest::Approx(-7.5));
  CHECK(ledger.totals().r_log == doctest::Approx(ledger.totals().delta + ledger.totals().mix));
  CHECK(*ledger.margin(2) == doctest::Approx(-1.5 - 3.0));
  CHECK(*ledger.hypercompression_margin() == doctest::Approx(-7.5 - 15.0));
  CHECK_THROWS(ledger.totals(6));
}

TEST_CASE("ledger skips undefined in-model losses") {
  LossLedger ledger;
  LossRecord r = record(1.0);
  r.i_log = kNaN;
  ledger.add(r, kNaN);
  ledger.add(record(2.0), kNaN);
  CHECK(ledger.totals().i_log == doctest::Approx(2.25));
  CHECK(ledger.totals().i_log_undefined == 1);
  CHECK_FALSE(ledger.hypercompression_margin().has_value());
}

TEST_CASE("overconfidence ratio") {
  CHECK(overconfidence_ratio(0.05, 0.025) == doctest::Approx(2.0));
  CHECK_THROWS(overconfidence_ratio(0.05, 0.0));
}

TEST_CASE("two-point Bernoulli step") {
  for (long l : {-10L, -4L, -2L, 0L, 2L, 4L, 12L}) {
    for (int y : {0, 1}) {
      const BernoulliStep s = bernoulli_step(l, y, 0.5);
      INFO("L=" << l << " y=" << y);
      CHECK(s.gap == doctest::Approx(direct_gap(l, y)).epsilon(1e-12).scale(1e-300));
      CHECK(s.min_posterior == doctest::Approx(1.0 / (1.0 + std::exp2(std::abs(l)))));
      CHECK(s.expected_gap == doctest::Approx(0.5 * direct_gap(l, 0) + 0.5 * direct_gap(l, 1)));
      CHECK(s.gap >= 0.0);
    }
  }
  // Three successes and one failure: the log2 likelihood ratio is 2 (3 - 1) = 4.
  const double direct = std::log2(std::pow(0.8, 3) * 0.2 / (std::pow(0.2, 3) * 0.8));
  CHECK(direct == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(bernoulli_step(4, 1, 0.5).min_posterior == doctest::Approx(1.0 / 17.0));
}

TEST_CASE("tiny gaps keep relative accuracy") {
  const BernoulliStep s = bernoulli_step(80, 0, 0.5);
  CHECK(s.gap > 0.0);
  CHECK(s.gap / s.min_posterior == doctest::Approx(3.0 - std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("Bernoulli toy statistics") {
  const BernoulliToyResult r = bernoulli_toy(0.5, {4, 100}, 4000, 12, 1);
  CHECK(r.l_identity_failures == 0);
  CHECK(r.bound_violations == 0);
  // The realized gap of an unlikely outcome approaches (3 - ln 4) min posterior > 2(e - 2) min posterior.
  CHECK(r.realized_bound_violations > 0);
  CHECK(r.max_realized_ratio <= 3.0 - std::log(4.0) + 1e-9);
  CHECK(r.bound_checks == 4000 * 100);
  CHECK(r.levels[1].prob_abs_l_large >= 0.7);
  CHECK(r.levels[1].mean_l == doctest::Approx(0.0).scale(1.0).epsilon(1.0));
  const BernoulliToyResult same = bernoulli_toy(0.5, {4, 100}, 4000, 12, 3);
  CHECK(same.levels[1].mean_gap == r.levels[1].mean_gap);
  CHECK(same.max_realized_ratio == r.max_realized_ratio);
  CHECK_THROWS_AS(bernoulli_toy(1.5, {4}, 10, 1, 1), NumericalError);
}

TEST_CASE("sign probabilities of L match the binomial law") {
  // Exact P(n1 <= k) for Bin(50, 0.6) by direct summation.
  auto cdf = [](int k) {
    double s = 0.0;
    for (int j = 0; j <= k; ++j)
      s += std::exp(std::lgamma(51.0) - std::lgamma(j + 1.0) - std::lgamma(51.0 - j) + j * std::log(0.6) +
                    (50 - j) * std::log(0.4));
    return s;
  };
  const BernoulliToyResult r = bernoulli_toy(0.6, {50}, 40000, 21, 1);
  const double se = 0.5 / std::sqrt(40000.0);
  CHECK(std::abs(r.levels[0].prob_l_negative - cdf(24)) <= 4.0 * se);
  CHECK(std::abs(r.levels[0].prob_l_nonpositive - cdf(25)) <= 4.0 * se);
}
