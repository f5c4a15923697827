#include "safebayes/eta_learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "safebayes/errors.hpp"
#include "safebayes/numeric.hpp"

namespace safebayes {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Downdates closer to singular than this are refitted from scratch.
constexpr double kDowndateFloor = 1e-8;

}  // namespace

std::size_t EtaGrid::index_of_one() const {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] == 1.0) return k;
  }
  throw std::logic_error("eta grid lacks eta = 1");
}

EtaGrid eta_grid(const EtaGridSpec& spec) {
  if (!(spec.kappa_step > 0.0) || !std::isfinite(spec.kappa_step)) {
    throw NumericalError("kappa_step must be positive");
  }
  if (spec.kappa_max < 1) throw NumericalError("kappa_max must be at least 1");
  const double ratio = spec.kappa_max / spec.kappa_step;
  const long steps = std::lround(ratio);
  if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 || steps < 1) {
    throw NumericalError("kappa_max must be a whole number of kappa_step steps");
  }
  EtaGrid g{spec, {}};
  const long first = spec.include_gt1 ? -steps : 0;
  for (long k = first; k <= steps; ++k) {
    g.values.push_back(std::exp2(-static_cast<double>(k) * spec.kappa_step));
  }
  return g;
}

PriorBuilder ModelConfig::builder() const {
  const double scale = prior_scale;
  const VarianceSpec v = variance;
  return [scale, v](int order) { return isotropic_prior(order, scale, v); };
}

ModelEnsemble ModelConfig::make_ensemble(double eta) const {
  return ModelEnsemble(model_space_prior(), builder(), eta, b_formula);
}

std::string_view to_string(SafeBayesVariant v) {
  switch (v) {
    case SafeBayesVariant::r_log: return "R_log";
    case SafeBayesVariant::i_log: return "I_log";
    case SafeBayesVariant::r_square: return "R_square";
    case SafeBayesVariant::i_square: return "I_square";
  }
  return "R_log";
}

void check_variant(SafeBayesVariant v, const ModelConfig& model) {
  const bool square = v == SafeBayesVariant::r_square || v == SafeBayesVariant::i_square;
  if (square && !model.fixed_variance()) {
    throw ConfigError(std::string(to_string(v)) + " SafeBayes needs a fixed variance model");
  }
  if (!square && model.fixed_variance()) {
    throw ConfigError(std::string(to_string(v)) + " SafeBayes needs an inverse-gamma variance model");
  }
}

EtaResult select_eta(const EtaGrid& grid, Eigen::VectorXd objectives) {
  if (grid.values.empty()) throw DimensionError("empty eta grid");
  if (objectives.size() != static_cast<Eigen::Index>(grid.size())) {
    throw DimensionError("objective count does not match the grid");
  }
  EtaResult r;
  r.index = first_argmin(objectives);
  r.eta_hat = grid.values[r.index];
  r.objectives = std::move(objectives);
  return r;
}

long discount_start(long steps, double discount) {
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw NumericalError("discount fraction must lie in [0, 1)");
  }
  return static_cast<long>(std::ceil(discount * static_cast<double>(steps) - 1e-12));
}

EtaTracker::EtaTracker(const ModelConfig& model, std::vector<double> etas, bool cesaro,
                       std::optional<PseudoTruth> pseudo_truth)
    : model_(model), etas_(std::move(etas)), pseudo_truth_(std::move(pseudo_truth)) {
  if (etas_.empty()) throw DimensionError("empty eta grid");
  for (double eta : etas_) {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw NumericalError("learning rates must be positive");
    ensembles_.push_back(model_.make_ensemble(eta));
    ledgers_.emplace_back();
    if (cesaro) cesaro_.emplace_back(model_.pmax);
  }
}

const CesaroState& EtaTracker::cesaro(std::size_t k) const {
  if (cesaro_.empty()) throw std::logic_error("Cesaro tracking is disabled");
  return cesaro_.at(k);
}

void EtaTracker::step(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  const double optimal = pseudo_truth_ ? point_log_loss(pseudo_truth_->coefficients,
                                                        pseudo_truth_->sigma2, x, y)
                                       : std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < ensembles_.size(); ++k) {
    const LossRecord rec = ensembles_[k].advance_with_losses(x, y, etas_[k]);
    ledgers_[k].add(rec, optimal);
    if (!cesaro_.empty()) cesaro_[k].update(ensembles_[k]);
  }
  ++count_;
}

void EtaTracker::run(const Dataset& data) {
  for (Eigen::Index i = 0; i < data.size(); ++i) step(data.x.col(i), data.y[i]);
}

double EtaTracker::objective(std::size_t k, SafeBayesVariant v, long steps,
                             double discount) const {
  const auto& ledger = ledgers_.at(k);
  const long start = discount_start(steps, discount);
  const LedgerTotals& hi = ledger.totals(steps);
  const LedgerTotals& lo = ledger.totals(start);
  switch (v) {
    case SafeBayesVariant::r_log: return hi.r_log - lo.r_log;
    case SafeBayesVariant::i_log: return hi.i_log - lo.i_log;
    case SafeBayesVariant::i_square: return hi.square - lo.square;
    case SafeBayesVariant::r_square: {
      const double s2 = std::get<FixedVariance>(model_.variance).sigma2;
      const double n = static_cast<double>(steps - start);
      return 2.0 * s2 * (hi.r_log - lo.r_log) - n * s2 * (kLog2Pi + std::log(s2));
    }
  }
  return 0.0;
}

double EtaTracker::bayes_objective(std::size_t k, long steps) const {
  return ledgers_.at(k).totals(steps).bayes_log;
}

EtaResult safe_bayes_from(const EtaTracker& tracker, const EtaGrid& grid,
                          SafeBayesVariant variant, long steps, double discount_fraction) {
  check_variant(variant, tracker.model());
  if (tracker.etas() != grid.values) throw DimensionError("tracker does not follow the grid");
  Eigen::VectorXd obj(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    obj[static_cast<Eigen::Index>(k)] = tracker.objective(k, variant, steps, discount_fraction);
  }
  return select_eta(grid, std::move(obj));
}

EtaResult run_safe_bayes(const Dataset& data, const ModelConfig& model, const EtaGrid& grid,
                         SafeBayesVariant variant, double discount_fraction) {
  check_variant(variant, model);
  if (grid.values.empty()) throw DimensionError("empty eta grid");
  discount_start(0, discount_fraction);
  EtaTracker tracker(model, grid.values);
  tracker.run(data);
  return safe_bayes_from(tracker, grid, variant, tracker.count(), discount_fraction);
}

EtaResult empirical_bayes_from(const EtaTracker& tracker, const EtaGrid& grid, long steps) {
  if (tracker.etas() != grid.values) throw DimensionError("tracker does not follow the grid");
  Eigen::VectorXd obj(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    obj[static_cast<Eigen::Index>(k)] = tracker.bayes_objective(k, steps);
  }
  return select_eta(grid, std::move(obj));
}

EtaResult empirical_bayes_eta(const Dataset& data, const ModelConfig& model,
                              const EtaGrid& grid) {
  if (grid.values.empty()) throw DimensionError("empty eta grid");
  EtaTracker tracker(model, grid.values);
  tracker.run(data);
  return empirical_bayes_from(tracker, grid, tracker.count());
}

std::string_view to_string(CvLoss loss) {
  return loss == CvLoss::square ? "square" : "predictive_log";
}

namespace {

struct HeldOut {
  Eigen::VectorXd mean;
  double leverage = 0.0;
  double residual = 0.0;
  VariancePosterior exact;   // variance part with the exactly integrated scale
  VariancePosterior scored;  // variance part following the model's b formula
};

HeldOut refit_without(const PosteriorState& full, const Dataset& data, Eigen::Index skip) {
  PosteriorState st(full.prior(), full.eta(), full.b_formula());
  const auto d = st.dim();
  for (Eigen::Index j = 0; j < data.size(); ++j) {
    if (j != skip) st.update(data.x.col(j).head(d), data.y[j]);
  }
  const PredictiveTerms t = st.terms(data.x.col(skip).head(d), data.y[skip]);
  HeldOut h{st.mean(), t.leverage, t.residual, variance_posterior(st), variance_posterior(st)};
  if (!h.exact.fixed) h.exact.scale = st.scale_exact();
  return h;
}

}  // namespace

double loo_score(const ModelEnsemble& ensemble, const ModelConfig& model, const Dataset& data,
                 CvLoss loss) {
  const Eigen::Index n = data.size();
  if (n < 2) throw DimensionError("leave-one-out needs at least two points");
  if (ensemble.count() != n) throw DimensionError("ensemble has not absorbed exactly the data");
  const double eta = ensemble.eta();
  const auto& states = ensemble.states();
  const auto m = static_cast<Eigen::Index>(states.size());
  const Eigen::VectorXd log_prior = model.model_space_prior().log_weights();

  Eigen::VectorXd log_marginal(m);
  std::vector<Eigen::MatrixXd> prior_precision(states.size());
  for (Eigen::Index p = 0; p < m; ++p) {
    const auto& st = states[p];
    log_marginal[p] = std::isfinite(log_prior[p]) ? st.log_tempered_marginal() : 0.0;
    if (!st.has_fixed_variance() && st.b_formula() == BFormula::paper) {
      prior_precision[p] = st.prior().covariance.llt().solve(
          Eigen::MatrixXd::Identity(st.dim(), st.dim()));
    }
  }

  double total = 0.0;
  Eigen::VectorXd log_w(m), pred_log(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = data.y[i];
    double fit = 0.0;
    std::vector<double> fits(states.size(), 0.0);
    for (Eigen::Index p = 0; p < m; ++p) {
      if (!std::isfinite(log_prior[p])) {
        log_w[p] = -kInf;
        pred_log[p] = 0.0;
        continue;
      }
      const auto& st = states[p];
      const auto x = data.x.col(i).head(st.dim());
      const PredictiveTerms t = st.terms(x, y);
      const double g = 1.0 - eta * t.leverage;
      HeldOut h;
      if (g < kDowndateFloor) {
        h = refit_without(st, data, i);
      } else {
        h.leverage = t.leverage / g;
        h.residual = t.residual / g;
        h.mean = st.mean() - (eta * h.residual) * t.u;
        h.exact = variance_posterior(st);
        if (!h.exact.fixed) {
          h.exact.shape = st.shape() - 0.5 * eta;
          h.exact.scale = st.scale_exact() -
                          eta * h.residual * h.residual / (2.0 * (1.0 + eta * h.leverage));
        }
        h.scored = h.exact;
        if (!h.exact.fixed && st.b_formula() == BFormula::paper) {
          const Eigen::VectorXd diff = h.mean - st.prior().mean;
          h.scored.scale = h.exact.scale - 0.5 * diff.dot(prior_precision[p] * diff);
        }
      }
      log_w[p] = log_prior[p] + log_marginal[p] -
                 log_tempered_evidence(h.exact, h.leverage, h.residual, eta);
      pred_log[p] = log_tempered_evidence(h.scored, h.leverage, h.residual, 1.0);
      fits[p] = y - h.residual;
    }
    log_w.array() -= log_sum_exp(log_w);
    if (loss == CvLoss::square) {
      for (Eigen::Index p = 0; p < m; ++p) {
        if (std::isfinite(log_w[p])) fit += std::exp(log_w[p]) * fits[p];
      }
      total += (y - fit) * (y - fit);
    } else {
      total += -log_sum_exp(log_w + pred_log);
    }
  }
  return total / static_cast<double>(n);
}

EtaResult cv_eta_from(const EtaTracker& tracker, const EtaGrid& grid, const Dataset& data,
                      CvLoss loss) {
  if (tracker.etas() != grid.values) throw DimensionError("tracker does not follow the grid");
  Eigen::VectorXd obj(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    obj[static_cast<Eigen::Index>(k)] = loo_score(tracker.ensemble(k), tracker.model(), data, loss);
  }
  return select_eta(grid, std::move(obj));
}

EtaResult cv_eta(const Dataset& data, const ModelConfig& model, const EtaGrid& grid,
                 CvLoss loss) {
  if (data.size() < 2) throw DimensionError("leave-one-out needs at least two points");
  EtaTracker tracker(model, grid.values);
  tracker.run(data);
  return cv_eta_from(tracker, grid, data, loss);
}

std::string_view to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::aicc: return "aicc";
    case BaselineMethod::bic: return "bic";
    case BaselineMethod::kfold: return "kfold";
    case BaselineMethod::loo: return "loo";
    case BaselineMethod::gcv: return "gcv";
  }
  return "aicc";
}

namespace {

double max_log_likelihood(const Eigen::MatrixXd& xp, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xp);
  if (qr.rank() < xp.cols()) return -kInf;
  const Eigen::VectorXd beta = qr.solve(y);
  const double rss = (y - xp * beta).squaredNorm();
  const double n = static_cast<double>(y.size());
  if (!(rss > 0.0)) return kInf;
  return -0.5 * n * (kLog2Pi + std::log(rss / n) + 1.0);
}

// Square-loss score of the eta = 1 posterior mean of one model.
double bayes_cv_score(const Eigen::MatrixXd& xp, const Eigen::VectorXd& y,
                      const ConjugatePrior& prior, BaselineMethod method, int folds) {
  const auto d = xp.cols();
  const Eigen::Index n = y.size();
  const Eigen::MatrixXd prior_precision =
      prior.covariance.llt().solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::VectorXd shift = prior_precision * prior.mean;
  const Eigen::MatrixXd gram = xp.transpose() * xp;
  const Eigen::VectorXd xy = xp.transpose() * y;
  const Eigen::MatrixXd lambda = prior_precision + gram;
  Eigen::LLT<Eigen::MatrixXd> llt(lambda);
  if (llt.info() != Eigen::Success) throw NumericalError("posterior precision not positive definite");
  const Eigen::VectorXd mean = llt.solve(shift + xy);
  const Eigen::VectorXd resid = y - xp * mean;

  if (method == BaselineMethod::gcv) {
    const double trace = llt.solve(gram).trace();
    const double denom = 1.0 - trace / static_cast<double>(n);
    return resid.squaredNorm() / static_cast<double>(n) / (denom * denom);
  }
  if (method == BaselineMethod::loo) {
    const Eigen::MatrixXd sx = llt.solve(xp.transpose());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = xp.row(i).dot(sx.col(i));
      const double r = resid[i] / (1.0 - s);
      total += r * r;
    }
    return total / static_cast<double>(n);
  }
  const int k = std::max(2, std::min<int>(folds, static_cast<int>(n)));
  double total = 0.0;
  for (int b = 0; b < k; ++b) {
    const Eigen::Index lo = n * b / k;
    const Eigen::Index hi = n * (b + 1) / k;
    const auto xb = xp.middleRows(lo, hi - lo);
    const auto yb = y.segment(lo, hi - lo);
    Eigen::LLT<Eigen::MatrixXd> fold(lambda - xb.transpose() * xb);
    if (fold.info() != Eigen::Success) throw NumericalError("fold precision not positive definite");
    const Eigen::VectorXd fm = fold.solve(shift + xy - xb.transpose() * yb);
    total += (yb - xb * fm).squaredNorm();
  }
  return total / static_cast<double>(n);
}

}  // namespace

BaselineResult baseline_model_selection(const Dataset& data, const ModelConfig& model,
                                        BaselineMethod method, int folds) {
  const Eigen::Index n = data.size();
  if (model.pmax < 0) throw DimensionError("pmax must be non-negative");
  if (data.x.rows() < model.pmax + 1) throw DimensionError("data narrower than pmax + 1");
  const bool cv = method == BaselineMethod::kfold || method == BaselineMethod::loo ||
                  method == BaselineMethod::gcv;
  if (cv && n < 2) throw DimensionError("cross-validation needs at least two points");
  BaselineResult res;
  res.scores = Eigen::VectorXd::Constant(model.pmax + 1, kInf);
  const double nd = static_cast<double>(n);
  for (int p = 0; p <= model.pmax; ++p) {
    const Eigen::MatrixXd xp = data.x.topRows(p + 1).transpose();
    const double k = p + 2.0;
    double score = kInf;
    switch (method) {
      case BaselineMethod::aicc: {
        if (nd - k - 1.0 <= 0.0 || n <= p + 1) break;
        const double ll = max_log_likelihood(xp, data.y);
        if (!std::isfinite(ll)) break;
        score = -2.0 * ll + 2.0 * k + 2.0 * k * (k + 1.0) / (nd - k - 1.0);
        break;
      }
      case BaselineMethod::bic: {
        if (n <= p + 1) break;
        const double ll = max_log_likelihood(xp, data.y);
        if (!std::isfinite(ll)) break;
        score = -2.0 * ll + k * std::log(nd);
        break;
      }
      default:
        score = bayes_cv_score(xp, data.y, isotropic_prior(p, model.prior_scale, model.variance),
                               method, folds);
    }
    res.scores[p] = score;
  }
  res.order = static_cast<int>(first_argmin(res.scores));
  if (!std::isfinite(res.scores[res.order])) {
    throw NumericalError(std::string(to_string(method)) + " is undefined for every model order");
  }
  return res;
}

}  // namespace safebayes
