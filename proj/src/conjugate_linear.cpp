#include "safebayes/conjugate_linear.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "safebayes/errors.hpp"
#include "safebayes/numeric.hpp"

namespace safebayes {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void validate(const VarianceSpec& v) {
  if (const auto* f = std::get_if<FixedVariance>(&v)) {
    if (!(f->sigma2 > 0.0) || !std::isfinite(f->sigma2)) {
      throw NumericalError("fixed variance must be positive and finite");
    }
  } else {
    const auto& g = std::get<InverseGammaVariance>(v);
    if (!(g.shape > 0.0) || !(g.scale > 0.0) || !std::isfinite(g.shape) ||
        !std::isfinite(g.scale)) {
      throw NumericalError("inverse-gamma shape and scale must be positive and finite");
    }
  }
}

std::string_view to_string(BFormula f) { return f == BFormula::paper ? "paper" : "exact"; }

void ConjugatePrior::validate() const {
  const auto d = mean.size();
  if (d < 1) throw DimensionError("prior mean must have at least one entry (intercept)");
  if (covariance.rows() != d || covariance.cols() != d) {
    throw DimensionError("prior covariance is " + std::to_string(covariance.rows()) + "x" +
                         std::to_string(covariance.cols()) + ", expected " + std::to_string(d) +
                         "x" + std::to_string(d));
  }
  if (!mean.allFinite() || !covariance.allFinite()) {
    throw NumericalError("prior contains non-finite entries");
  }
  if (!covariance.isApprox(covariance.transpose(), 1e-12)) {
    throw NumericalError("prior covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("prior covariance is not positive definite");
  }
  safebayes::validate(variance);
}

ConjugatePrior isotropic_prior(int order, double scale, const VarianceSpec& variance) {
  if (order < 0) throw DimensionError("model order must be non-negative");
  if (!(scale > 0.0)) throw NumericalError("prior scale must be positive");
  const Eigen::Index d = order + 1;
  return ConjugatePrior{Eigen::VectorXd::Zero(d), scale * Eigen::MatrixXd::Identity(d, d),
                        variance};
}

PosteriorState::PosteriorState(ConjugatePrior prior, double eta, BFormula formula)
    : prior_(std::move(prior)), eta_(eta), formula_(formula) {
  prior_.validate();
  if (!(eta_ >= 0.0) || !std::isfinite(eta_)) {
    throw NumericalError("learning rate must be finite and non-negative");
  }
  const auto d = dim();
  Eigen::LLT<Eigen::MatrixXd> llt(prior_.covariance);
  prior_precision_ = llt.solve(Eigen::MatrixXd::Identity(d, d));
  prior_precision_ = 0.5 * (prior_precision_ + prior_precision_.transpose()).eval();
  prior_shift_ = prior_precision_ * prior_.mean;
  prior_log_det_ = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

  gram_ = Eigen::MatrixXd::Zero(d, d);
  cross_ = Eigen::VectorXd::Zero(d);
  covariance_ = prior_.covariance;
  mean_ = prior_.mean;
  refresh_scales();
}

double PosteriorState::fixed_sigma2() const {
  if (const auto* f = std::get_if<FixedVariance>(&prior_.variance)) return f->sigma2;
  return kNaN;
}

Eigen::MatrixXd PosteriorState::precision() const { return prior_precision_ + eta_ * gram_; }

double PosteriorState::shape() const {
  if (const auto* g = std::get_if<InverseGammaVariance>(&prior_.variance)) {
    return g->shape + 0.5 * eta_ * static_cast<double>(count_);
  }
  return kNaN;
}

double PosteriorState::scale_paper() const { return scale_paper_; }

double PosteriorState::scale_exact() const { return scale_exact_; }

void PosteriorState::refresh_scales() {
  const auto* g = std::get_if<InverseGammaVariance>(&prior_.variance);
  if (!g) {
    scale_paper_ = scale_exact_ = kNaN;
    return;
  }
  if (count_ == 0) {
    scale_paper_ = scale_exact_ = g->scale;
    return;
  }
  const double rss = std::max(yy_ - 2.0 * mean_.dot(cross_) + mean_.dot(gram_ * mean_), 0.0);
  const Eigen::VectorXd diff = mean_ - prior_.mean;
  scale_paper_ = g->scale + 0.5 * eta_ * rss;
  scale_exact_ = scale_paper_ + 0.5 * diff.dot(prior_precision_ * diff);
}

double PosteriorState::scale() const {
  return formula_ == BFormula::paper ? scale_paper() : scale_exact();
}

std::optional<double> PosteriorState::sigma2_mean() const {
  if (has_fixed_variance()) return fixed_sigma2();
  const double a = shape();
  if (!(a > 1.0)) return std::nullopt;
  return scale() / (a - 1.0);
}

void PosteriorState::check_point(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
  if (x.size() != dim()) {
    throw DimensionError("covariate vector has " + std::to_string(x.size()) +
                         " entries, model of order " + std::to_string(order()) + " expects " +
                         std::to_string(dim()));
  }
  if (x[0] != 1.0) throw DimensionError("covariate vector must start with the intercept 1");
  if (!x.allFinite() || !std::isfinite(y)) throw NumericalError("non-finite data point");
}

PredictiveTerms PosteriorState::terms(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
  check_point(x, y);
  PredictiveTerms t;
  t.u.noalias() = covariance_ * x;
  t.leverage = x.dot(t.u);
  t.residual = y - x.dot(mean_);
  return t;
}

void PosteriorState::update(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  update(x, y, terms(x, y));
}

void PosteriorState::update(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                            const PredictiveTerms& t) {
  check_point(x, y);
  const double denom = 1.0 + eta_ * t.leverage;
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw NumericalError("rank-one update lost positive definiteness");
  }
  const double k = eta_ / denom;
  covariance_.noalias() -= (k * t.u) * t.u.transpose();
  mean_.noalias() += (k * t.residual) * t.u;
  gram_.noalias() += x * x.transpose();
  cross_.noalias() += y * x;
  yy_ += y * y;
  ++count_;
  if (++since_refactor_ >= kRefactorInterval || !(covariance_.diagonal().array() > 0.0).all()) {
    refactor();
  } else {
    refresh_scales();
  }
}

void PosteriorState::refactor() {
  const Eigen::MatrixXd lambda = precision();
  Eigen::LLT<Eigen::MatrixXd> llt(lambda);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("posterior precision is not positive definite (degenerate prior or eta)");
  }
  const auto d = dim();
  covariance_ = llt.solve(Eigen::MatrixXd::Identity(d, d));
  covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
  mean_ = llt.solve(prior_shift_ + eta_ * cross_);
  since_refactor_ = 0;
  if (!covariance_.allFinite() || !mean_.allFinite()) {
    throw NumericalError("posterior refactorization produced non-finite values");
  }
  refresh_scales();
}

double PosteriorState::log_tempered_marginal() const {
  Eigen::LLT<Eigen::MatrixXd> llt(precision());
  if (llt.info() != Eigen::Success) throw NumericalError("posterior precision not positive definite");
  const double log_det_lambda = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n = static_cast<double>(count_);
  const double half_log_det_ratio = -0.5 * (log_det_lambda + prior_log_det_);
  if (has_fixed_variance()) {
    const double s2 = fixed_sigma2();
    double rss = std::max(yy_ - 2.0 * mean_.dot(cross_) + mean_.dot(gram_ * mean_), 0.0);
    const Eigen::VectorXd diff = mean_ - prior_.mean;
    const double quad = 0.5 * (eta_ * rss + diff.dot(prior_precision_ * diff));
    return -0.5 * n * eta_ * (kLog2Pi + std::log(s2)) + half_log_det_ratio - quad / s2;
  }
  const auto& g = std::get<InverseGammaVariance>(prior_.variance);
  const double a = shape();
  const double b = scale_exact();
  return -0.5 * n * eta_ * kLog2Pi + half_log_det_ratio + g.shape * std::log(g.scale) -
         std::lgamma(g.shape) + std::lgamma(a) - a * std::log(b);
}

PosteriorSummary posterior_summary(const PosteriorState& state) {
  return PosteriorSummary{state.mean(), state.covariance(), state.sigma2_mean(), state.shape(),
                          state.scale()};
}

double r_log_loss(const PosteriorState& state, const PredictiveTerms& t) {
  const double r2 = t.residual * t.residual;
  if (state.has_fixed_variance()) {
    const double s2 = state.fixed_sigma2();
    return 0.5 * (kLog2Pi + std::log(s2)) + 0.5 * r2 / s2 + 0.5 * t.leverage;
  }
  const double a = state.shape();
  const double b = state.scale();
  return 0.5 * (kLog2Pi + std::log(b)) - 0.5 * digamma(a) + 0.5 * a * r2 / b + 0.5 * t.leverage;
}

double i_log_loss(const PosteriorState& state, const PredictiveTerms& t) {
  const auto s2 = state.sigma2_mean();
  if (!s2) return std::numeric_limits<double>::quiet_NaN();
  return 0.5 * (kLog2Pi + std::log(*s2)) + 0.5 * t.residual * t.residual / *s2;
}

VariancePosterior variance_posterior(const PosteriorState& state) {
  if (state.has_fixed_variance()) return VariancePosterior{true, state.fixed_sigma2(), 0.0, 0.0};
  return VariancePosterior{false, 0.0, state.shape(), state.scale()};
}

double log_tempered_evidence(const VariancePosterior& v, double leverage, double residual,
                             double eta_flat) {
  if (!(eta_flat > 0.0) || !std::isfinite(eta_flat)) {
    throw NumericalError("flattening exponent must be positive");
  }
  const double r2 = residual * residual;
  const double spread = 1.0 + eta_flat * leverage;
  if (v.fixed) {
    return -0.5 * eta_flat * (kLog2Pi + std::log(v.sigma2)) - 0.5 * std::log(spread) -
           0.5 * eta_flat * r2 / (v.sigma2 * spread);
  }
  const double a = v.shape;
  const double b = v.scale;
  const double a_next = a + 0.5 * eta_flat;
  return -0.5 * eta_flat * kLog2Pi - 0.5 * std::log(spread) + a * std::log(b) - std::lgamma(a) +
         std::lgamma(a_next) - a_next * std::log(b + 0.5 * eta_flat * r2 / spread);
}

double log_tempered_evidence(const PosteriorState& state, const PredictiveTerms& t,
                             double eta_flat) {
  return log_tempered_evidence(variance_posterior(state), t.leverage, t.residual, eta_flat);
}

LossRecord step_losses(const PosteriorState& state, const Eigen::Ref<const Eigen::VectorXd>& x,
                       double y, double eta_flat) {
  const PredictiveTerms t = state.terms(x, y);
  LossRecord rec;
  rec.r_log = r_log_loss(state, t);
  rec.i_log = i_log_loss(state, t);
  rec.square = t.residual * t.residual;
  rec.bayes_log = -log_tempered_evidence(state, t, 1.0);
  rec.mix = eta_flat == 1.0 ? rec.bayes_log : -log_tempered_evidence(state, t, eta_flat) / eta_flat;
  rec.delta = rec.r_log - rec.mix;
  return rec;
}

PredictiveMoments predictive_moments(const PosteriorState& state,
                                     const Eigen::Ref<const Eigen::VectorXd>& x) {
  const PredictiveTerms t = state.terms(x, 0.0);
  const auto s2 = state.sigma2_mean();
  if (!s2) throw VarianceUndefined("predictive variance needs inverse-gamma shape a > 1");
  return PredictiveMoments{x.dot(state.mean()), *s2 * (1.0 + t.leverage)};
}

}  // namespace safebayes
