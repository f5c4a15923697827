#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "safebayes/numeric.hpp"
#include "safebayes/random.hpp"

using namespace safebayes;

TEST_CASE("digamma at known points") {
  const double gamma = 0.57721566490153286061;
  CHECK(digamma(1.0) == doctest::Approx(-gamma).epsilon(1e-13));
  CHECK(digamma(0.5) == doctest::Approx(-gamma - 2.0 * std::log(2.0)).epsilon(1e-13));
  CHECK(digamma(2.0) == doctest::Approx(1.0 - gamma).epsilon(1e-13));
  CHECK(digamma(10.0) == doctest::Approx(2.251752589066721107647).epsilon(1e-13));
  CHECK(digamma(0.25) == doctest::Approx(-gamma - M_PI / 2.0 - 3.0 * std::log(2.0)).epsilon(1e-13));
  CHECK(digamma(1000.5) == doctest::Approx(6.90775532064880).epsilon(1e-13));
}

TEST_CASE("digamma recurrence") {
  for (double x = 0.05; x < 30.0; x *= 1.37) {
    CHECK(digamma(x + 1.0) - digamma(x) == doctest::Approx(1.0 / x).epsilon(1e-12));
  }
}

TEST_CASE("log_sum_exp") {
  Eigen::VectorXd v(3);
  v << 1000.0, 1000.0, -std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
  v << -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
      -std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(v) == -std::numeric_limits<double>::infinity());
  CHECK(log_sum_exp(Eigen::VectorXd()) == -std::numeric_limits<double>::infinity());
  v << std::log(0.2), std::log(0.3), std::log(0.5);
  CHECK(log_sum_exp(v) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("first_argmin takes the first of tied minima") {
  Eigen::VectorXd v(5);
  v << 3.0, 1.0, 2.0, 1.0, 5.0;
  CHECK(first_argmin(v) == 1);
  v << 0.0, 0.0, 0.0, 0.0, 0.0;
  CHECK(first_argmin(v) == 0);
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  std::set<std::uint64_t> seeds;
  for (std::uint64_t r = 0; r < 1000; ++r) seeds.insert(mix64(7, r));
  CHECK(seeds.size() == 1000);
  CHECK(mix64(7, 3) != mix64(8, 3));
}

TEST_CASE("rng moments") {
  Rng r(1);
  double s = 0.0, s2 = 0.0, u = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    u += r.uniform();
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(u / n - 0.5) < 0.005);
}
