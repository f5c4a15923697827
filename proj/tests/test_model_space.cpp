#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safebayes/errors.hpp"
#include "safebayes/model_space.hpp"
#include "safebayes/numeric.hpp"

using namespace safebayes;

namespace {

PriorBuilder builder(double scale, VarianceSpec v) {
  return [scale, v](int p) { return isotropic_prior(p, scale, v); };
}

struct Points {
  Eigen::MatrixXd x;  // columns
  Eigen::VectorXd y;
};

Points points(int n, int pmax, std::mt19937_64& gen) {
  std::normal_distribution<double> z;
  Points pts{Eigen::MatrixXd(pmax + 1, n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    pts.x(0, i) = 1.0;
    for (int j = 1; j <= pmax; ++j) pts.x(j, i) = z(gen);
    pts.y[i] = (i % 2 == 0) ? 0.0 : 0.1 * pts.x.col(i).segment(1, std::min(pmax, 4)).sum() + 0.2 * z(gen);
    if (i % 2 == 0) pts.x.col(i).tail(pmax).setZero();
  }
  return pts;
}

}  // namespace

TEST_CASE("log-squared model prior") {
  const Eigen::VectorXd lw = ModelPrior{ModelPriorKind::log_squared, 50}.log_weights();
  CHECK(lw.size() == 51);
  CHECK(log_sum_exp(lw) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  for (int p = 0; p < 50; ++p) {
    const double q0 = p + 2.0, q1 = p + 3.0;
    const double expect = std::log(q1 * std::pow(std::log(q1), 2) / (q0 * std::pow(std::log(q0), 2)));
    CHECK(lw[p] - lw[p + 1] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("uniform and fixed-order model priors") {
  const Eigen::VectorXd u = ModelPrior{ModelPriorKind::uniform, 9}.log_weights();
  for (int p = 0; p <= 9; ++p) CHECK(u[p] == doctest::Approx(-std::log(10.0)));
  const Eigen::VectorXd f = ModelPrior{ModelPriorKind::fixed_order, 3}.log_weights();
  CHECK(f[3] == 0.0);
  for (int p = 0; p < 3; ++p) CHECK(std::isinf(f[p]));
  CHECK(to_string(model_prior_kind_from_string("fixed_order")) == "fixed_order");
  CHECK_THROWS_AS(model_prior_kind_from_string("flat"), ConfigError);
}

TEST_CASE("sequential weights equal prior times batch tempered marginals") {
  std::mt19937_64 gen(4);
  for (double eta : {1.0, 0.5, 0.125}) {
    for (bool fixed : {false, true}) {
      const VarianceSpec v = fixed ? VarianceSpec{FixedVariance{0.03}}
                                   : VarianceSpec{InverseGammaVariance{1.0, 0.025}};
      const ModelPrior prior{ModelPriorKind::log_squared, 6};
      ModelEnsemble ens(prior, builder(1.0, v), eta, BFormula::exact);
      const Points pts = points(40, 6, gen);
      for (int i = 0; i < 40; ++i) ens.advance(pts.x.col(i), pts.y[i]);
      Eigen::VectorXd expect = prior.log_weights();
      for (int p = 0; p <= 6; ++p) {
        PosteriorState st(isotropic_prior(p, 1.0, v), eta, BFormula::exact);
        for (int i = 0; i < 40; ++i) st.update(pts.x.col(i).head(p + 1), pts.y[i]);
        expect[p] += st.log_tempered_marginal();
      }
      expect.array() -= log_sum_exp(expect);
      INFO("eta=" << eta << " fixed=" << fixed);
      CHECK((ens.log_weights() - expect).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("advance_with_losses equals step_losses then advance") {
  std::mt19937_64 gen(6);
  const Points pts = points(30, 5, gen);
  const ModelPrior prior{ModelPriorKind::log_squared, 5};
  const auto b = builder(1.0, InverseGammaVariance{1.0, 0.025});
  ModelEnsemble a(prior, b, 0.5), c(prior, b, 0.5);
  for (int i = 0; i < 30; ++i) {
    const LossRecord r1 = a.step_losses(pts.x.col(i), pts.y[i], 0.5);
    a.advance(pts.x.col(i), pts.y[i]);
    const LossRecord r2 = c.advance_with_losses(pts.x.col(i), pts.y[i], 0.5);
    CHECK(r1.r_log == doctest::Approx(r2.r_log).epsilon(1e-13));
    CHECK(r1.mix == doctest::Approx(r2.mix).epsilon(1e-13));
    CHECK(r1.bayes_log == doctest::Approx(r2.bayes_log).epsilon(1e-13));
  }
  CHECK((a.log_weights() - c.log_weights()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mix loss at eta one is the Bayes predictive log-loss") {
  std::mt19937_64 gen(7);
  const Points pts = points(12, 3, gen);
  ModelEnsemble ens(ModelPrior{ModelPriorKind::uniform, 3},
                    builder(1.0, InverseGammaVariance{1.0, 0.025}), 1.0);
  for (int i = 0; i < 11; ++i) ens.advance(pts.x.col(i), pts.y[i]);
  const LossRecord r = ens.step_losses(pts.x.col(11), pts.y[11], 1.0);
  CHECK(r.mix == r.bayes_log);
  CHECK(r.delta == doctest::Approx(r.r_log - r.mix));
  CHECK(r.r_log >= r.bayes_log);
}

TEST_CASE("summary statistics") {
  ModelEnsemble ens(ModelPrior{ModelPriorKind::uniform, 4}, builder(1.0, FixedVariance{1.0}), 1.0);
  CHECK(ens.map_order() == 0);
  CHECK(ens.mixture_coefficients().norm() == 0.0);
  CHECK(*ens.mixture_sigma2() == 1.0);
  std::mt19937_64 gen(8);
  const Points pts = points(20, 4, gen);
  for (int i = 0; i < 20; ++i) ens.advance(pts.x.col(i), pts.y[i]);
  const Eigen::VectorXd w = ens.weights();
  Eigen::VectorXd c = Eigen::VectorXd::Zero(5);
  for (int p = 0; p <= 4; ++p) c.head(p + 1) += w[p] * ens.states()[p].mean();
  CHECK((ens.mixture_coefficients() - c).norm() <= 1e-14);
  Eigen::Index best;
  w.maxCoeff(&best);
  CHECK(ens.map_order() == best);
  CHECK(ens.padded_mean(2).tail(2).norm() == 0.0);
  CHECK_THROWS_AS(ens.advance(Eigen::VectorXd::Ones(3), 0.0), DimensionError);
}

TEST_CASE("expected predictive variance matches simulation") {
  std::mt19937_64 gen(9);
  const int pmax = 3;
  const Points pts = points(16, pmax, gen);
  ModelEnsemble ens(ModelPrior{ModelPriorKind::log_squared, pmax},
                    builder(1.0, InverseGammaVariance{1.0, 0.025}), 0.5);
  for (int i = 0; i < 16; ++i) ens.advance(pts.x.col(i), pts.y[i]);
  // X: intercept plus independent N(0, 1) covariates.
  const Eigen::MatrixXd moments = Eigen::MatrixXd::Identity(pmax + 1, pmax + 1);
  const double v = ens.expected_predictive_variance(moments);

  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  const Eigen::VectorXd w = ens.weights();
  const Eigen::VectorXd c = ens.mixture_coefficients();
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& st : ens.states()) chol.push_back(st.covariance().llt().matrixL());
  const int m = 400000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < m; ++k) {
    Eigen::VectorXd x(pmax + 1);
    x[0] = 1.0;
    for (int j = 1; j <= pmax; ++j) x[j] = z(gen);
    double acc = u(gen);
    int p = 0;
    while (p < pmax && (acc -= w[p]) > 0.0) ++p;
    const auto& st = ens.states()[p];
    std::gamma_distribution<double> gam(st.shape(), 1.0 / st.scale());
    const double s2 = 1.0 / gam(gen);
    Eigen::VectorXd e(p + 1);
    for (int j = 0; j <= p; ++j) e[j] = z(gen);
    const Eigen::VectorXd beta = st.mean() + std::sqrt(s2) * (chol[p] * e);
    const double y = x.head(p + 1).dot(beta) + std::sqrt(s2) * z(gen);
    const double d = y - x.dot(c);
    sum += d * d;
    sum2 += d * d * d * d;
  }
  const double mean = sum / m;
  const double se = std::sqrt((sum2 / m - mean * mean) / m);
  CHECK(std::abs(v - mean) <= 5.0 * se);
}

TEST_CASE("Cesaro posterior averages the absorbed ensembles") {
  std::mt19937_64 gen(10);
  const int pmax = 3;
  const Points pts = points(6, pmax, gen);
  ModelEnsemble ens(ModelPrior{ModelPriorKind::log_squared, pmax},
                    builder(1.0, InverseGammaVariance{1.0, 0.025}), 1.0);
  CesaroState ces(pmax);
  CHECK_THROWS_AS(ces.expected_predictive_variance(Eigen::MatrixXd::Identity(4, 4)), VarianceUndefined);
  std::vector<ModelEnsemble> seen;
  for (int i = 0; i < 6; ++i) {
    ens.advance(pts.x.col(i), pts.y[i]);
    ces.update(ens);
    seen.push_back(ens);
  }
  Eigen::VectorXd c = Eigen::VectorXd::Zero(pmax + 1);
  for (const auto& e : seen) c += e.mixture_coefficients() / 6.0;
  CHECK((ces.regression() - c).norm() <= 1e-14);

  const Eigen::MatrixXd moments = Eigen::MatrixXd::Identity(pmax + 1, pmax + 1);
  double expect = 0.0;
  for (const auto& e : seen) {
    const Eigen::VectorXd d = e.mixture_coefficients() - c;
    expect += (e.expected_predictive_variance(moments) + d.dot(moments * d)) / 6.0;
  }
  CHECK(ces.expected_predictive_variance(moments) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(ces.variance_defined());
}

TEST_CASE("Cesaro variance stays undefined once an undefined posterior is absorbed") {
  ModelEnsemble ens(ModelPrior{ModelPriorKind::uniform, 1},
                    builder(1.0, InverseGammaVariance{1.0, 0.025}), 1.0);
  CesaroState ces(1);
  ces.update(ens);  // prior: a = 1
  CHECK_FALSE(ces.variance_defined());
  ens.advance(Eigen::Vector2d(1.0, 0.5), 0.1);
  ces.update(ens);
  CHECK_FALSE(ces.variance_defined());
  CHECK_THROWS_AS(ces.predictive_variance(Eigen::Vector2d(1.0, 0.0)), VarianceUndefined);
  CHECK(ces.regression().size() == 2);
}
