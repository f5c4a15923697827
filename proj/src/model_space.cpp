#include "safebayes/model_space.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "safebayes/errors.hpp"
#include "safebayes/numeric.hpp"

namespace safebayes {

std::string_view to_string(ModelPriorKind kind) {
  switch (kind) {
    case ModelPriorKind::log_squared: return "log_squared";
    case ModelPriorKind::uniform: return "uniform";
    case ModelPriorKind::fixed_order: return "fixed_order";
  }
  return "log_squared";
}

ModelPriorKind model_prior_kind_from_string(std::string_view name) {
  if (name == "log_squared") return ModelPriorKind::log_squared;
  if (name == "uniform") return ModelPriorKind::uniform;
  if (name == "fixed_order") return ModelPriorKind::fixed_order;
  throw ConfigError("unknown model prior '" + std::string(name) +
                    "' (expected log_squared, uniform or fixed_order)");
}

Eigen::VectorXd ModelPrior::log_weights() const {
  if (pmax < 0) throw DimensionError("pmax must be non-negative, got " + std::to_string(pmax));
  Eigen::VectorXd lw(pmax + 1);
  for (int p = 0; p <= pmax; ++p) {
    if (kind == ModelPriorKind::fixed_order) {
      lw[p] = p == pmax ? 0.0 : -std::numeric_limits<double>::infinity();
    } else if (kind == ModelPriorKind::uniform) {
      lw[p] = 0.0;
    } else {
      const double q = p + 2.0;
      lw[p] = -std::log(q) - 2.0 * std::log(std::log(q));
    }
  }
  lw.array() -= log_sum_exp(lw);
  return lw;
}

ModelEnsemble::ModelEnsemble(const ModelPrior& prior, const PriorBuilder& builder, double eta,
                             BFormula formula)
    : eta_(eta), log_weights_(prior.log_weights()) {
  states_.reserve(static_cast<std::size_t>(prior.pmax) + 1);
  for (int p = 0; p <= prior.pmax; ++p) {
    ConjugatePrior cp = builder(p);
    if (cp.order() != p) {
      throw DimensionError("prior builder returned order " + std::to_string(cp.order()) +
                           " for model " + std::to_string(p));
    }
    states_.emplace_back(std::move(cp), eta, formula);
  }
}

void ModelEnsemble::check_point(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() < pmax() + 1) {
    throw DimensionError("covariate vector has " + std::to_string(x.size()) + " entries, need " +
                         std::to_string(pmax() + 1));
  }
}

LossRecord ModelEnsemble::combine(const Eigen::Ref<const Eigen::VectorXd>& /*x*/, double y,
                                  double eta_flat, const std::vector<PredictiveTerms>& terms,
                                  Eigen::VectorXd* log_evidence_at_eta) const {
  const auto m = static_cast<Eigen::Index>(states_.size());
  Eigen::VectorXd r_log(m), neg_bayes(m), flat(m);
  double fit = 0.0;
  const Eigen::VectorXd w = weights();
  for (Eigen::Index p = 0; p < m; ++p) {
    const auto& st = states_[p];
    const auto& t = terms[p];
    r_log[p] = r_log_loss(st, t);
    neg_bayes[p] = log_tempered_evidence(st, t, 1.0);
    flat[p] = eta_flat == 1.0 ? neg_bayes[p] : log_tempered_evidence(st, t, eta_flat);
    if (log_evidence_at_eta) {
      double& e = (*log_evidence_at_eta)[p];
      if (eta_ == 1.0) {
        e = neg_bayes[p];
      } else if (eta_ == eta_flat) {
        e = flat[p];
      } else {
        e = eta_ > 0.0 ? log_tempered_evidence(st, t, eta_) : 0.0;
      }
    }
    fit += w[p] * (y - t.residual);
  }
  LossRecord rec;
  rec.r_log = w.dot(r_log);
  rec.bayes_log = -log_sum_exp(log_weights_ + neg_bayes);
  rec.mix = -log_sum_exp(log_weights_ + flat) / eta_flat;
  const double resid = y - fit;
  rec.square = resid * resid;
  if (const auto s2 = mixture_sigma2()) {
    rec.i_log = 0.5 * (kLog2Pi + std::log(*s2)) + 0.5 * resid * resid / *s2;
  } else {
    rec.i_log = std::numeric_limits<double>::quiet_NaN();
  }
  rec.delta = rec.r_log - rec.mix;
  return rec;
}

LossRecord ModelEnsemble::step_losses(const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                                      double eta_flat) const {
  check_point(x);
  if (!(eta_flat > 0.0)) throw NumericalError("flattening exponent must be positive");
  std::vector<PredictiveTerms> terms;
  terms.reserve(states_.size());
  for (const auto& st : states_) terms.push_back(st.terms(x.head(st.dim()), y));
  return combine(x, y, eta_flat, terms, nullptr);
}

LossRecord ModelEnsemble::advance_with_losses(const Eigen::Ref<const Eigen::VectorXd>& x,
                                              double y, double eta_flat) {
  check_point(x);
  if (!(eta_flat > 0.0)) throw NumericalError("flattening exponent must be positive");
  std::vector<PredictiveTerms> terms;
  terms.reserve(states_.size());
  for (const auto& st : states_) terms.push_back(st.terms(x.head(st.dim()), y));
  Eigen::VectorXd evidence(static_cast<Eigen::Index>(states_.size()));
  const LossRecord rec = combine(x, y, eta_flat, terms, &evidence);
  log_weights_ += evidence;
  log_weights_.array() -= log_sum_exp(log_weights_);
  for (std::size_t p = 0; p < states_.size(); ++p) {
    states_[p].update(x.head(states_[p].dim()), y, terms[p]);
  }
  ++count_;
  return rec;
}

void ModelEnsemble::advance(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  check_point(x);
  for (std::size_t p = 0; p < states_.size(); ++p) {
    auto& st = states_[p];
    const auto head = x.head(st.dim());
    const PredictiveTerms t = st.terms(head, y);
    if (eta_ > 0.0) log_weights_[static_cast<Eigen::Index>(p)] += log_tempered_evidence(st, t, eta_);
    st.update(head, y, t);
  }
  log_weights_.array() -= log_sum_exp(log_weights_);
  ++count_;
}

int ModelEnsemble::map_order() const {
  Eigen::Index best = 0;
  for (Eigen::Index p = 1; p < log_weights_.size(); ++p) {
    if (log_weights_[p] > log_weights_[best]) best = p;
  }
  return static_cast<int>(best);
}

Eigen::VectorXd ModelEnsemble::padded_mean(int order) const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(pmax() + 1);
  const auto& st = states_.at(static_cast<std::size_t>(order));
  c.head(st.dim()) = st.mean();
  return c;
}

Eigen::VectorXd ModelEnsemble::mixture_coefficients() const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(pmax() + 1);
  const Eigen::VectorXd w = weights();
  for (std::size_t p = 0; p < states_.size(); ++p) {
    c.head(states_[p].dim()) += w[static_cast<Eigen::Index>(p)] * states_[p].mean();
  }
  return c;
}

std::optional<double> ModelEnsemble::mixture_sigma2() const {
  const Eigen::VectorXd w = weights();
  double s = 0.0;
  for (std::size_t p = 0; p < states_.size(); ++p) {
    const auto s2 = states_[p].sigma2_mean();
    if (!s2) return std::nullopt;
    s += w[static_cast<Eigen::Index>(p)] * *s2;
  }
  return s;
}

EnsembleSummary ModelEnsemble::summary() const {
  return EnsembleSummary{weights(), map_order(), mixture_coefficients(), mixture_sigma2()};
}

double ModelEnsemble::expected_predictive_variance(const Eigen::MatrixXd& moments) const {
  const auto d = pmax() + 1;
  if (moments.rows() < d || moments.cols() < d) {
    throw DimensionError("second-moment matrix smaller than the ensemble dimension");
  }
  const Eigen::VectorXd w = weights();
  const Eigen::VectorXd c = mixture_coefficients();
  double total = -c.dot(moments.topLeftCorner(d, d) * c);
  for (std::size_t p = 0; p < states_.size(); ++p) {
    const auto& st = states_[p];
    const auto s2 = st.sigma2_mean();
    if (!s2) throw VarianceUndefined("predictive variance needs inverse-gamma shape a > 1");
    const auto k = st.dim();
    const auto mk = moments.topLeftCorner(k, k);
    const double within = *s2 * (moments(0, 0) + (st.covariance().cwiseProduct(mk)).sum());
    const double between = st.mean().dot(mk * st.mean());
    total += w[static_cast<Eigen::Index>(p)] * (within + between);
  }
  return total;
}

double ModelEnsemble::expected_predictive_variance(const Eigen::MatrixXd& moments,
                                                   int order) const {
  const auto& st = states_.at(static_cast<std::size_t>(order));
  const auto s2 = st.sigma2_mean();
  if (!s2) throw VarianceUndefined("predictive variance needs inverse-gamma shape a > 1");
  const auto k = st.dim();
  if (moments.rows() < k || moments.cols() < k) {
    throw DimensionError("second-moment matrix smaller than the model dimension");
  }
  return *s2 * (moments(0, 0) + (st.covariance().cwiseProduct(moments.topLeftCorner(k, k))).sum());
}

CesaroState::CesaroState(int pmax)
    : sum_coefficients_(Eigen::VectorXd::Zero(pmax + 1)),
      sum_outer_(Eigen::MatrixXd::Zero(pmax + 1, pmax + 1)),
      sum_within_(Eigen::MatrixXd::Zero(pmax + 1, pmax + 1)) {
  if (pmax < 0) throw DimensionError("pmax must be non-negative");
}

void CesaroState::update(const ModelEnsemble& ensemble) {
  if (ensemble.pmax() + 1 != sum_coefficients_.size()) {
    throw DimensionError("ensemble dimension does not match the Cesaro accumulator");
  }
  const Eigen::VectorXd w = ensemble.weights();
  const auto& states = ensemble.states();
  for (const auto& st : states) {
    if (!st.sigma2_mean()) variance_defined_ = false;
  }
  for (std::size_t p = 0; p < states.size(); ++p) {
    const auto& st = states[p];
    const double wp = w[static_cast<Eigen::Index>(p)];
    if (wp == 0.0) continue;
    const auto k = st.dim();
    sum_coefficients_.head(k) += wp * st.mean();
    sum_outer_.topLeftCorner(k, k).noalias() += (wp * st.mean()) * st.mean().transpose();
    if (variance_defined_) {
      const double s2 = *st.sigma2_mean();
      sum_within_.topLeftCorner(k, k) += (wp * s2) * st.covariance();
      sum_sigma2_ += wp * s2;
    }
  }
  ++count_;
}

Eigen::VectorXd CesaroState::regression() const {
  if (count_ == 0) return sum_coefficients_;
  return sum_coefficients_ / static_cast<double>(count_);
}

double CesaroState::predictive_variance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (count_ == 0) throw VarianceUndefined("Cesaro posterior has absorbed no posteriors");
  if (!variance_defined_) throw VarianceUndefined("Cesaro posterior includes a posterior with a <= 1");
  const auto d = sum_coefficients_.size();
  if (x.size() < d) throw DimensionError("covariate vector shorter than the Cesaro dimension");
  const auto xd = x.head(d);
  const double n = static_cast<double>(count_);
  const double m = xd.dot(regression());
  return (sum_sigma2_ + xd.dot(sum_within_ * xd) + xd.dot(sum_outer_ * xd)) / n - m * m;
}

double CesaroState::expected_predictive_variance(const Eigen::MatrixXd& moments) const {
  if (count_ == 0) throw VarianceUndefined("Cesaro posterior has absorbed no posteriors");
  if (!variance_defined_) throw VarianceUndefined("Cesaro posterior includes a posterior with a <= 1");
  const auto d = sum_coefficients_.size();
  if (moments.rows() < d || moments.cols() < d) {
    throw DimensionError("second-moment matrix smaller than the Cesaro dimension");
  }
  const auto md = moments.topLeftCorner(d, d);
  const double n = static_cast<double>(count_);
  const Eigen::VectorXd c = regression();
  return (sum_sigma2_ * moments(0, 0) + sum_within_.cwiseProduct(md).sum() +
          sum_outer_.cwiseProduct(md).sum()) /
             n -
         c.dot(md * c);
}

}  // namespace safebayes
