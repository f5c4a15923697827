#include "safebayes/ground_truth.hpp"

#include <cmath>

#include "safebayes/errors.hpp"
#include "safebayes/numeric.hpp"

namespace safebayes {

namespace {

double uniform_power_moment(int k) { return k % 2 == 0 ? 1.0 / (k + 1.0) : 0.0; }

bool easy_on_curve(const Generator& gen, const Eigen::VectorXd& t) {
  if (gen.easy_scale) return true;
  const double at = t[0] + gen.easy_x * t.tail(t.size() - 1).sum();
  return std::abs(at - gen.easy_y) <= 1e-12 * (1.0 + std::abs(gen.easy_y));
}

Eigen::VectorXd easy_point(const Generator& gen) {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(gen.pmax + 1, gen.easy_x);
  v[0] = 1.0;
  return v;
}

Eigen::MatrixXd scaled(const Eigen::MatrixXd& m, double s) {
  Eigen::VectorXd d = Eigen::VectorXd::Constant(m.rows(), s);
  d[0] = 1.0;
  return d.asDiagonal() * m * d.asDiagonal();
}

}  // namespace

std::string_view to_string(CovariateLaw law) {
  switch (law) {
    case CovariateLaw::gauss: return "gauss";
    case CovariateLaw::uniform: return "uniform";
    case CovariateLaw::polynomial: return "polynomial";
  }
  return "gauss";
}

CovariateLaw covariate_law_from_string(std::string_view name) {
  if (name == "gauss") return CovariateLaw::gauss;
  if (name == "uniform") return CovariateLaw::uniform;
  if (name == "polynomial") return CovariateLaw::polynomial;
  throw ConfigError("unknown covariate law '" + std::string(name) +
                    "' (expected gauss, uniform or polynomial)");
}

void Generator::validate() const {
  if (pmax < 0) throw DimensionError("generator pmax must be non-negative");
  if (coefficients.size() < 1 || coefficients.size() > pmax + 1) {
    throw DimensionError("generator has " + std::to_string(coefficients.size()) +
                         " coefficients, allowed 1.." + std::to_string(pmax + 1));
  }
  if (!(easy_prob >= 0.0 && easy_prob < 1.0)) throw NumericalError("easy_prob must lie in [0, 1)");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw NumericalError("noise variance must be positive");
  }
  if (easy_scale && !(*easy_scale > 0.0)) throw NumericalError("easy_scale must be positive");
  if (!coefficients.allFinite() || !std::isfinite(intercept_offset) || !std::isfinite(easy_x) ||
      !std::isfinite(easy_y)) {
    throw NumericalError("generator contains non-finite values");
  }
}

Eigen::VectorXd Generator::regression_coefficients() const {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(pmax + 1);
  t.head(coefficients.size()) = coefficients;
  t[0] += intercept_offset;
  return t;
}

namespace presets {

Generator wrong_model(int pmax) {
  Generator g;
  g.pmax = pmax;
  return g;
}

Generator correct_model(int pmax) {
  Generator g;
  g.name = "correct_model";
  g.pmax = pmax;
  g.noise_variance = 1.0 / 40.0;
  g.easy_prob = 0.0;
  return g;
}

Generator polynomial_wrong(int pmax) {
  Generator g;
  g.name = "polynomial_wrong";
  g.law = CovariateLaw::polynomial;
  g.pmax = pmax;
  g.coefficients = Eigen::VectorXd::Zero(1);
  return g;
}

Generator polynomial_correct(int pmax) {
  Generator g = polynomial_wrong(pmax);
  g.name = "polynomial_correct";
  g.noise_variance = 1.0 / 40.0;
  g.easy_prob = 0.0;
  return g;
}

Generator fewer_easy(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "fewer_easy";
  g.easy_prob = 0.25;
  return g;
}

Generator less_easy(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "less_easy";
  g.easy_scale = 0.2;
  return g;
}

Generator zero_regression(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "zero_regression";
  g.coefficients = Eigen::VectorXd::Zero(1);
  return g;
}

Generator large_coefficients(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "large_coefficients";
  g.coefficients = (Eigen::VectorXd(5) << 0.0, 1.0, 1.0, 1.0, 1.0).finished();
  return g;
}

Generator shifted_easy(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "shifted_easy";
  g.intercept_offset = -0.04;
  g.easy_x = 0.2;
  g.easy_y = 0.04;
  return g;
}

Generator uncentered(int pmax) {
  Generator g = wrong_model(pmax);
  g.name = "uncentered";
  g.intercept_offset = 0.5;
  g.easy_y = 0.5;
  return g;
}

Generator by_name(std::string_view name, int pmax) {
  if (name == "wrong_model") return wrong_model(pmax);
  if (name == "correct_model") return correct_model(pmax);
  if (name == "polynomial_wrong") return polynomial_wrong(pmax);
  if (name == "polynomial_correct") return polynomial_correct(pmax);
  if (name == "fewer_easy") return fewer_easy(pmax);
  if (name == "less_easy") return less_easy(pmax);
  if (name == "zero_regression") return zero_regression(pmax);
  if (name == "large_coefficients") return large_coefficients(pmax);
  if (name == "shifted_easy") return shifted_easy(pmax);
  if (name == "uncentered") return uncentered(pmax);
  throw ConfigError("unknown generator preset '" + std::string(name) + "'");
}

}  // namespace presets

Dataset Dataset::prefix(Eigen::Index n) const {
  if (n < 0 || n > size()) throw DimensionError("prefix length out of range");
  return Dataset{x.leftCols(n), y.head(n)};
}

Dataset sample(const Generator& gen, Eigen::Index n, Rng& rng) {
  gen.validate();
  const Eigen::VectorXd t = gen.regression_coefficients();
  const double sd = std::sqrt(gen.noise_variance);
  const Eigen::VectorXd fixed_easy = easy_point(gen);
  Dataset data{Eigen::MatrixXd(gen.pmax + 1, n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    auto col = data.x.col(i);
    const bool easy = gen.easy_prob > 0.0 && rng.bernoulli(gen.easy_prob);
    if (easy && !gen.easy_scale) {
      col = fixed_easy;
      data.y[i] = gen.easy_y;
      continue;
    }
    const double shrink = easy ? *gen.easy_scale : 1.0;
    col[0] = 1.0;
    switch (gen.law) {
      case CovariateLaw::gauss:
        for (int j = 1; j <= gen.pmax; ++j) col[j] = shrink * rng.normal();
        break;
      case CovariateLaw::uniform:
        for (int j = 1; j <= gen.pmax; ++j) col[j] = shrink * rng.uniform(-1.0, 1.0);
        break;
      case CovariateLaw::polynomial: {
        const double s = rng.uniform(-1.0, 1.0);
        double power = 1.0;
        for (int j = 1; j <= gen.pmax; ++j) {
          power *= s;
          col[j] = shrink * power;
        }
        break;
      }
    }
    data.y[i] = t.dot(col) + shrink * sd * rng.normal();
  }
  return data;
}

Eigen::MatrixXd regular_second_moments(const Generator& gen) {
  const int d = gen.pmax + 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  switch (gen.law) {
    case CovariateLaw::gauss:
      m.setIdentity();
      break;
    case CovariateLaw::uniform:
      m.diagonal().setConstant(1.0 / 3.0);
      m(0, 0) = 1.0;
      break;
    case CovariateLaw::polynomial:
      for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) m(j, k) = uniform_power_moment(j + k);
      }
      break;
  }
  return m;
}

Eigen::MatrixXd covariate_second_moments(const Generator& gen) {
  gen.validate();
  const Eigen::MatrixXd reg = regular_second_moments(gen);
  Eigen::MatrixXd easy;
  if (gen.easy_scale) {
    easy = scaled(reg, *gen.easy_scale);
  } else {
    const Eigen::VectorXd v = easy_point(gen);
    easy = v * v.transpose();
  }
  return (1.0 - gen.easy_prob) * reg + gen.easy_prob * easy;
}

double square_risk(const Generator& gen, const Eigen::Ref<const Eigen::VectorXd>& c) {
  gen.validate();
  if (c.size() > gen.pmax + 1) {
    throw DimensionError("coefficient vector has " + std::to_string(c.size()) +
                         " entries, generator supports " + std::to_string(gen.pmax + 1));
  }
  Eigen::VectorXd full = Eigen::VectorXd::Zero(gen.pmax + 1);
  full.head(c.size()) = c;
  const Eigen::VectorXd d = gen.regression_coefficients() - full;
  const Eigen::MatrixXd reg = regular_second_moments(gen);
  const double regular = gen.noise_variance + d.dot(reg * d);
  double easy = 0.0;
  if (gen.easy_prob > 0.0) {
    if (gen.easy_scale) {
      const double s = *gen.easy_scale;
      easy = s * s * gen.noise_variance + d.dot(scaled(reg, s) * d);
    } else {
      const double e = gen.easy_y - full.dot(easy_point(gen));
      easy = e * e;
    }
  }
  return (1.0 - gen.easy_prob) * regular + gen.easy_prob * easy;
}

PseudoTruth optimal_params(const Generator& gen) {
  gen.validate();
  const Eigen::VectorXd t = gen.regression_coefficients();
  Eigen::VectorXd beta;
  if (gen.easy_prob == 0.0 || easy_on_curve(gen, t)) {
    beta = t;
  } else {
    const Eigen::MatrixXd reg = regular_second_moments(gen);
    const Eigen::VectorXd v = easy_point(gen);
    const Eigen::MatrixXd m = covariate_second_moments(gen);
    const Eigen::VectorXd xy = (1.0 - gen.easy_prob) * (reg * t) + gen.easy_prob * gen.easy_y * v;
    beta = m.ldlt().solve(xy);
  }
  int order = static_cast<int>(beta.size()) - 1;
  while (order > 0 && std::abs(beta[order]) <= 1e-12) --order;
  PseudoTruth pt;
  pt.order = order;
  pt.coefficients = beta.head(order + 1);
  pt.sigma2 = square_risk(gen, pt.coefficients);
  return pt;
}

double log_risk(const Generator& gen, const Eigen::Ref<const Eigen::VectorXd>& c, double sigma2) {
  if (!(sigma2 > 0.0)) throw NumericalError("log-risk needs a positive variance");
  return square_risk(gen, c) / (2.0 * sigma2) + 0.5 * (kLog2Pi + std::log(sigma2));
}

double point_log_loss(const Eigen::Ref<const Eigen::VectorXd>& c, double sigma2,
                      const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  if (x.size() < c.size()) throw DimensionError("covariate vector shorter than coefficients");
  const double r = y - x.head(c.size()).dot(c);
  return 0.5 * (kLog2Pi + std::log(sigma2)) + 0.5 * r * r / sigma2;
}

}  // namespace safebayes
