#include "safebayes/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "safebayes/diagnostics.hpp"
#include "safebayes/errors.hpp"
#include "safebayes/random.hpp"

namespace safebayes {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double parse_real(const json& v, const std::string& path) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      std::size_t used = 0;
      if (slash == std::string::npos) {
        const double x = std::stod(s, &used);
        if (used == s.size()) return x;
      } else {
        const std::string num = s.substr(0, slash), den = s.substr(slash + 1);
        std::size_t u1 = 0, u2 = 0;
        const double a = std::stod(num, &u1), b = std::stod(den, &u2);
        if (u1 == num.size() && u2 == den.size() && b != 0.0) return a / b;
      }
    } catch (const std::exception&) {
    }
  }
  throw ConfigError(path + ": expected a number or a fraction string like \"1/3\"");
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double real(const std::string& key, double fallback) {
    const json* v = find(key);
    return v ? parse_real(*v, at(key)) : fallback;
  }

  long integer(const std::string& key, long fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(at(key) + ": expected an integer");
    return v->get<long>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(at(item.key()) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

bool is_method(const std::string& name) {
  for (const char* m : kMethodNames) {
    if (name == m) return true;
  }
  return false;
}

template <typename F>
auto rethrow_at(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void read_model(ObjectReader& root, ExperimentConfig& cfg) {
  const json* m = root.find("model");
  if (!m) return;
  ObjectReader r(*m, root.at("model"));
  cfg.model.pmax = static_cast<int>(r.integer("pmax", cfg.model.pmax));
  if (cfg.model.pmax < 0) throw ConfigError(r.at("pmax") + ": must be non-negative");
  if (const json* v = r.find("variance")) {
    ObjectReader vr(*v, r.at("variance"));
    const std::string kind = vr.string("kind", "inverse_gamma");
    if (kind == "inverse_gamma") {
      InverseGammaVariance ig{vr.real("shape", 1.0), vr.real("scale", 1.0 / 40.0)};
      if (!(ig.shape > 0.0)) throw ConfigError(vr.at("shape") + ": must be positive");
      if (!(ig.scale > 0.0)) throw ConfigError(vr.at("scale") + ": must be positive");
      cfg.model.variance = ig;
    } else if (kind == "fixed") {
      FixedVariance fv{vr.real("sigma2", 1.0 / 40.0)};
      if (!(fv.sigma2 > 0.0)) throw ConfigError(vr.at("sigma2") + ": must be positive");
      cfg.model.variance = fv;
    } else {
      throw ConfigError(vr.at("kind") + ": expected \"inverse_gamma\" or \"fixed\"");
    }
    vr.finish();
  }
  const std::string prior = r.string("prior", "informative");
  const json* scale = r.find("prior_scale");
  if (scale) {
    cfg.model.prior_scale = parse_real(*scale, r.at("prior_scale"));
    if (!(cfg.model.prior_scale > 0.0)) throw ConfigError(r.at("prior_scale") + ": must be positive");
    cfg.prior_name = "custom";
    if (r.find("prior")) {
      if (prior != "custom") throw ConfigError(r.at("prior") + ": give either prior or prior_scale");
    }
  } else if (prior == "informative") {
    cfg.model.prior_scale = 1.0;
    cfg.prior_name = prior;
  } else if (prior == "slightly_informative") {
    cfg.model.prior_scale = 1000.0;
    cfg.prior_name = prior;
  } else {
    throw ConfigError(r.at("prior") + ": expected \"informative\" or \"slightly_informative\"");
  }
  const std::string bf = r.string("b_formula", "paper");
  if (bf == "paper") {
    cfg.model.b_formula = BFormula::paper;
  } else if (bf == "exact") {
    cfg.model.b_formula = BFormula::exact;
  } else {
    throw ConfigError(r.at("b_formula") + ": expected \"paper\" or \"exact\"");
  }
  const std::string mp = r.string("model_prior", "log_squared");
  cfg.model.model_prior = rethrow_at(r.at("model_prior"), [&] { return model_prior_kind_from_string(mp); });
  r.finish();
}

void read_generator(ObjectReader& root, ExperimentConfig& cfg) {
  const json* g = root.find("generator");
  const int pmax = cfg.model.pmax;
  if (!g) {
    cfg.generator = presets::wrong_model(pmax);
    return;
  }
  ObjectReader r(*g, root.at("generator"));
  const std::string preset = r.string("preset", "wrong_model");
  cfg.generator = rethrow_at(r.at("preset"), [&] { return presets::by_name(preset, pmax); });
  Generator& gen = cfg.generator;
  gen.name = r.string("name", gen.name);
  if (const json* v = r.find("law")) {
    if (!v->is_string()) throw ConfigError(r.at("law") + ": expected a string");
    gen.law = rethrow_at(r.at("law"), [&] { return covariate_law_from_string(v->get<std::string>()); });
  }
  if (const json* v = r.find("coefficients")) {
    if (!v->is_array() || v->empty()) throw ConfigError(r.at("coefficients") + ": expected a non-empty array");
    gen.coefficients.resize(static_cast<Eigen::Index>(v->size()));
    for (std::size_t i = 0; i < v->size(); ++i) {
      gen.coefficients[static_cast<Eigen::Index>(i)] =
          parse_real((*v)[i], r.at("coefficients") + "[" + std::to_string(i) + "]");
    }
  }
  gen.intercept_offset = r.real("intercept_offset", gen.intercept_offset);
  gen.noise_variance = r.real("noise_variance", gen.noise_variance);
  gen.easy_prob = r.real("easy_prob", gen.easy_prob);
  gen.easy_x = r.real("easy_x", gen.easy_x);
  gen.easy_y = r.real("easy_y", gen.easy_y);
  if (const json* v = r.find("easy_scale")) {
    if (v->is_null()) {
      gen.easy_scale.reset();
    } else {
      gen.easy_scale = parse_real(*v, r.at("easy_scale"));
    }
  }
  r.finish();
  rethrow_at(root.at("generator"), [&] {
    gen.validate();
    return 0;
  });
}

}  // namespace

bool ExperimentConfig::has_method(const std::string& name) const {
  return std::find(methods.begin(), methods.end(), name) != methods.end();
}

std::vector<long> ExperimentConfig::evaluation_sizes() const {
  std::vector<long> out;
  if (eval_sizes) {
    out = *eval_sizes;
  } else {
    for (long n = 0; n <= std::min(dense_until, n_max); ++n) out.push_back(n);
    for (long n = dense_until + eval_step; n <= n_max; n += eval_step) out.push_back(n);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ExperimentConfig load_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("$: malformed JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader r(doc, "$");
  cfg.experiment_id = r.string("experiment_id", cfg.experiment_id);
  read_model(r, cfg);
  read_generator(r, cfg);
  if (const json* g = r.find("grid")) {
    ObjectReader gr(*g, r.at("grid"));
    cfg.grid.kappa_step = gr.real("kappa_step", cfg.grid.kappa_step);
    cfg.grid.kappa_max = static_cast<int>(gr.integer("kappa_max", cfg.grid.kappa_max));
    cfg.grid.include_gt1 = gr.boolean("include_gt1", cfg.grid.include_gt1);
    gr.finish();
    rethrow_at(r.at("grid"), [&] { return eta_grid(cfg.grid); });
  }
  if (const json* m = r.find("methods")) {
    if (!m->is_array()) throw ConfigError(r.at("methods") + ": expected an array of method names");
    cfg.methods.clear();
    for (std::size_t i = 0; i < m->size(); ++i) {
      const std::string path = r.at("methods") + "[" + std::to_string(i) + "]";
      if (!(*m)[i].is_string()) throw ConfigError(path + ": expected a string");
      const std::string name = (*m)[i].get<std::string>();
      if (!is_method(name)) throw ConfigError(path + ": unknown method '" + name + "'");
      if (cfg.has_method(name)) throw ConfigError(path + ": duplicate method '" + name + "'");
      cfg.methods.push_back(name);
    }
  }
  const bool fixed = cfg.model.fixed_variance();
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    const std::string& name = cfg.methods[i];
    const bool log_method = name == "r_log_safebayes" || name == "i_log_safebayes" ||
                            name == "discounted_r_log";
    const bool square_method = name == "r_square_safebayes" || name == "i_square_safebayes";
    const std::string path = r.at("methods") + "[" + std::to_string(i) + "]";
    if (log_method && fixed) {
      throw ConfigError(path + ": '" + name + "' needs an inverse_gamma variance model");
    }
    if (square_method && !fixed) throw ConfigError(path + ": '" + name + "' needs a fixed variance model");
  }
  cfg.discount_fraction = r.real("discount_fraction", cfg.discount_fraction);
  if (!(cfg.discount_fraction >= 0.0 && cfg.discount_fraction < 1.0)) {
    throw ConfigError(r.at("discount_fraction") + ": must lie in [0, 1)");
  }
  cfg.n_max = r.integer("n_max", cfg.n_max);
  if (cfg.n_max < 0) throw ConfigError(r.at("n_max") + ": must be non-negative");
  if (const json* e = r.find("eval")) {
    ObjectReader er(*e, r.at("eval"));
    cfg.dense_until = er.integer("dense_until", cfg.dense_until);
    cfg.eval_step = er.integer("step", cfg.eval_step);
    if (cfg.dense_until < 0) throw ConfigError(er.at("dense_until") + ": must be non-negative");
    if (cfg.eval_step < 1) throw ConfigError(er.at("step") + ": must be positive");
    if (const json* s = er.find("sizes")) {
      if (!s->is_array()) throw ConfigError(er.at("sizes") + ": expected an array");
      std::vector<long> sizes;
      for (std::size_t i = 0; i < s->size(); ++i) {
        const std::string path = er.at("sizes") + "[" + std::to_string(i) + "]";
        if (!(*s)[i].is_number_integer()) throw ConfigError(path + ": expected an integer");
        const long n = (*s)[i].get<long>();
        if (n < 0 || n > cfg.n_max) throw ConfigError(path + ": must lie in [0, n_max]");
        sizes.push_back(n);
      }
      cfg.eval_sizes = sizes;
    }
    er.finish();
  }
  cfg.cv_every = r.integer("cv_every", cfg.cv_every);
  if (cfg.cv_every < 1) throw ConfigError(r.at("cv_every") + ": must be positive");
  cfg.kfold = static_cast<int>(r.integer("kfold", cfg.kfold));
  if (cfg.kfold < 2) throw ConfigError(r.at("kfold") + ": must be at least 2");
  cfg.sweep_n = r.integer("sweep_n", cfg.sweep_n);
  if (cfg.sweep_n < 0) throw ConfigError(r.at("sweep_n") + ": must be non-negative");
  cfg.runs = static_cast<int>(r.integer("runs", cfg.runs));
  if (cfg.runs < 1) throw ConfigError(r.at("runs") + ": must be at least 1");
  if (const json* s = r.find("base_seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<long long>() >= 0)) {
      throw ConfigError(r.at("base_seed") + ": expected a non-negative integer");
    }
    cfg.base_seed = s->get<std::uint64_t>();
  }
  cfg.centering = r.boolean("centering", cfg.centering);
  r.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("$: cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str());
}

std::string ExperimentConfig::normalized_json() const {
  json doc;
  doc["experiment_id"] = experiment_id;
  json gen;
  gen["name"] = generator.name;
  gen["law"] = std::string(to_string(generator.law));
  gen["coefficients"] = std::vector<double>(generator.coefficients.data(),
                                            generator.coefficients.data() + generator.coefficients.size());
  gen["intercept_offset"] = generator.intercept_offset;
  gen["noise_variance"] = generator.noise_variance;
  gen["easy_prob"] = generator.easy_prob;
  gen["easy_x"] = generator.easy_x;
  gen["easy_y"] = generator.easy_y;
  gen["easy_scale"] = generator.easy_scale ? json(*generator.easy_scale) : json(nullptr);
  doc["generator"] = gen;
  json model;
  model["pmax"] = this->model.pmax;
  if (const auto* f = std::get_if<FixedVariance>(&this->model.variance)) {
    model["variance"] = {{"kind", "fixed"}, {"sigma2", f->sigma2}};
  } else {
    const auto& g = std::get<InverseGammaVariance>(this->model.variance);
    model["variance"] = {{"kind", "inverse_gamma"}, {"shape", g.shape}, {"scale", g.scale}};
  }
  model["prior"] = prior_name;
  if (prior_name == "custom") model["prior_scale"] = this->model.prior_scale;
  model["b_formula"] = std::string(to_string(this->model.b_formula));
  model["model_prior"] = std::string(to_string(this->model.model_prior));
  doc["model"] = model;
  doc["grid"] = {{"kappa_step", grid.kappa_step},
                 {"kappa_max", grid.kappa_max},
                 {"include_gt1", grid.include_gt1}};
  doc["methods"] = methods;
  doc["discount_fraction"] = discount_fraction;
  doc["n_max"] = n_max;
  json ev = {{"dense_until", dense_until}, {"step", eval_step}};
  if (eval_sizes) ev["sizes"] = *eval_sizes;
  doc["eval"] = ev;
  doc["cv_every"] = cv_every;
  doc["kfold"] = kfold;
  doc["sweep_n"] = sweep_n;
  doc["runs"] = runs;
  doc["base_seed"] = base_seed;
  doc["centering"] = centering;
  return doc.dump(2);
}

std::uint64_t run_seed(std::uint64_t base_seed, int run) {
  return mix64(base_seed, static_cast<std::uint64_t>(run));
}

namespace {

struct RunContext {
  const ExperimentConfig& cfg;
  const EtaGrid& grid;
  Eigen::MatrixXd moments;
  double shift = 0.0;  // mean removed from y when centering
  int run = 0;
  std::string b_formula;
};

enum class Flavor { plain, map, cesaro };

ResultRow blank_row(const RunContext& ctx, long n, const std::string& method) {
  ResultRow row;
  row.experiment_id = ctx.cfg.experiment_id;
  row.run = ctx.run;
  row.n = n;
  row.method = method;
  row.eta_hat = row.sq_risk = row.map_order = row.overconfidence = kNaN;
  row.cum_bayes_log = row.cum_r_log = row.cum_i_log = row.delta_cum = row.hyper_margin = kNaN;
  row.b_formula = ctx.b_formula;
  return row;
}

double risk_of(const RunContext& ctx, Eigen::VectorXd c) {
  c[0] += ctx.shift;
  return square_risk(ctx.cfg.generator, c);
}

ResultRow ensemble_row(const RunContext& ctx, const EtaTracker& tracker, std::size_t k, long n,
                       const std::string& method, Flavor flavor) {
  ResultRow row = blank_row(ctx, n, method);
  const ModelEnsemble& ens = tracker.ensemble(k);
  const LedgerTotals& tot = tracker.ledger(k).totals(n);
  row.eta_hat = tracker.etas()[k];
  row.map_order = ens.map_order();
  row.cum_bayes_log = tot.bayes_log;
  row.cum_r_log = tot.r_log;
  row.cum_i_log = tot.i_log;
  row.delta_cum = tot.delta;
  row.hyper_margin = tracker.ledger(k).margin(n).value_or(kNaN);
  if (tot.i_log_undefined > 0) row.note = "cum_i_log skips " + std::to_string(tot.i_log_undefined) + " undefined steps";
  auto append_note = [&](const std::string& s) { row.note = row.note.empty() ? s : row.note + "; " + s; };
  try {
    switch (flavor) {
      case Flavor::plain:
        row.sq_risk = risk_of(ctx, ens.mixture_coefficients());
        row.overconfidence =
            overconfidence_ratio(row.sq_risk, ens.expected_predictive_variance(ctx.moments));
        break;
      case Flavor::map: {
        const int p = ens.map_order();
        row.sq_risk = risk_of(ctx, ens.padded_mean(p));
        row.overconfidence =
            overconfidence_ratio(row.sq_risk, ens.expected_predictive_variance(ctx.moments, p));
        break;
      }
      case Flavor::cesaro: {
        const CesaroState& ces = tracker.cesaro(k);
        if (ces.count() == 0) {
          append_note("Cesaro posterior undefined before the first point");
          break;
        }
        row.sq_risk = risk_of(ctx, ces.regression());
        row.overconfidence =
            overconfidence_ratio(row.sq_risk, ces.expected_predictive_variance(ctx.moments));
        break;
      }
    }
  } catch (const VarianceUndefined& e) {
    append_note(std::string("overconfidence NA: ") + e.what());
  }
  return row;
}

struct RunOutput {
  std::vector<ResultRow> rows;
  std::vector<SweepRow> sweep;
};

RunOutput run_impl(const ExperimentConfig& cfg, int run, bool emit_rows, long sweep_n) {
  const EtaGrid grid = eta_grid(cfg.grid);
  Generator gen = cfg.generator;
  gen.pmax = cfg.model.pmax;
  Rng rng(run_seed(cfg.base_seed, run));
  const long n_total = emit_rows ? cfg.n_max : std::max(sweep_n, 0L);
  Dataset data = sample(gen, n_total, rng);

  RunContext ctx{cfg, grid, covariate_second_moments(gen), 0.0, run,
                 std::string(to_string(cfg.model.b_formula))};
  PseudoTruth pt = optimal_params(gen);
  if (cfg.centering && data.size() > 0) {
    ctx.shift = data.y.mean();
    data.y.array() -= ctx.shift;
    pt.coefficients[0] -= ctx.shift;
  }

  const bool cesaro = emit_rows && cfg.has_method("cesaro_variants");
  EtaTracker tracker(cfg.model, grid.values, cesaro, pt);
  const std::size_t one = grid.index_of_one();
  const bool maps = cfg.has_method("map_variants");
  const std::vector<long> evals = emit_rows ? cfg.evaluation_sizes() : std::vector<long>{};
  std::size_t next_eval = 0;
  RunOutput out;

  auto emit = [&](const std::string& name, std::size_t k, long n, std::optional<std::string> na) {
    if (na) {
      ResultRow row = blank_row(ctx, n, name);
      row.note = *na;
      out.rows.push_back(row);
      return;
    }
    out.rows.push_back(ensemble_row(ctx, tracker, k, n, name, Flavor::plain));
    if (maps) out.rows.push_back(ensemble_row(ctx, tracker, k, n, name + "_map", Flavor::map));
    if (cesaro) out.rows.push_back(ensemble_row(ctx, tracker, k, n, name + "_cesaro", Flavor::cesaro));
  };

  for (long n = 0; n <= n_total; ++n) {
    if (n == sweep_n && sweep_n > 0) {
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const LedgerTotals& t = tracker.ledger(k).totals(n);
        out.sweep.push_back(SweepRow{run, n, grid.values[k], t.r_log, t.mix, t.bayes_log, t.optimal_log});
      }
    }
    while (next_eval < evals.size() && evals[next_eval] < n) ++next_eval;
    if (next_eval < evals.size() && evals[next_eval] == n) {
      const bool cv_now = n % cfg.cv_every == 0;
      for (const char* mname : kMethodNames) {
        const std::string name = mname;
        if (!cfg.has_method(name)) continue;
        if (name == "bayes") {
          emit(name, one, n, std::nullopt);
        } else if (name == "r_log_safebayes") {
          emit(name, safe_bayes_from(tracker, grid, SafeBayesVariant::r_log, n).index, n, std::nullopt);
        } else if (name == "i_log_safebayes") {
          emit(name, safe_bayes_from(tracker, grid, SafeBayesVariant::i_log, n).index, n, std::nullopt);
        } else if (name == "r_square_safebayes") {
          emit(name, safe_bayes_from(tracker, grid, SafeBayesVariant::r_square, n).index, n, std::nullopt);
        } else if (name == "i_square_safebayes") {
          emit(name, safe_bayes_from(tracker, grid, SafeBayesVariant::i_square, n).index, n, std::nullopt);
        } else if (name == "discounted_r_log") {
          emit(name,
               safe_bayes_from(tracker, grid, SafeBayesVariant::r_log, n, cfg.discount_fraction).index,
               n, std::nullopt);
        } else if (name == "empirical_bayes") {
          emit(name, empirical_bayes_from(tracker, grid, n).index, n, std::nullopt);
        } else if (name == "cv_square" || name == "cv_log") {
          if (!cv_now) continue;
          if (n < 2) {
            emit(name, 0, n, "leave-one-out needs at least two points");
            continue;
          }
          const CvLoss loss = name == "cv_square" ? CvLoss::square : CvLoss::predictive_log;
          const Dataset prefix = data.prefix(n);
          emit(name, cv_eta_from(tracker, grid, prefix, loss).index, n, std::nullopt);
        } else if (name == "baselines") {
          if (!cv_now) continue;
          const Dataset prefix = data.prefix(n);
          const std::pair<BaselineMethod, const char*> methods[] = {
              {BaselineMethod::aicc, "aicc"},
              {BaselineMethod::bic, "bic"},
              {BaselineMethod::kfold, "kfold"},
              {BaselineMethod::loo, "loocv"},
              {BaselineMethod::gcv, "gcv"}};
          for (const auto& [method, label] : methods) {
            ResultRow row = blank_row(ctx, n, label);
            try {
              const BaselineResult b = baseline_model_selection(prefix, cfg.model, method, cfg.kfold);
              const ModelEnsemble& bayes = tracker.ensemble(one);
              row.map_order = b.order;
              row.sq_risk = risk_of(ctx, bayes.padded_mean(b.order));
              try {
                row.overconfidence = overconfidence_ratio(
                    row.sq_risk, bayes.expected_predictive_variance(ctx.moments, b.order));
              } catch (const VarianceUndefined& e) {
                row.note = std::string("overconfidence NA: ") + e.what();
              }
            } catch (const Error& e) {
              row.note = e.what();
            }
            out.rows.push_back(row);
          }
        }
      }
    }
    if (n < n_total) tracker.step(data.x.col(n), data.y[n]);
  }
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename F>
void for_each_run(int runs, int threads, F&& body) {
  const int workers = std::max(1, std::min(threads, runs));
  if (workers == 1) {
    for (int r = 0; r < runs; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int r = next++; r < runs; r = next++) {
        try {
          body(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ExperimentResult run_single(const ExperimentConfig& config, int run) {
  RunOutput out = run_impl(config, run, true, config.sweep_n <= config.n_max ? config.sweep_n : 0);
  ExperimentResult res;
  res.rows = std::move(out.rows);
  res.sweep = std::move(out.sweep);
  res.seeds.push_back(run_seed(config.base_seed, run));
  return res;
}

ExperimentResult run_matrix(const ExperimentConfig& config, int threads) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<RunOutput> outputs(static_cast<std::size_t>(config.runs));
  const long sweep_n = config.sweep_n <= config.n_max ? config.sweep_n : 0;
  for_each_run(config.runs, threads, [&](int r) {
    outputs[static_cast<std::size_t>(r)] = run_impl(config, r, true, sweep_n);
  });
  ExperimentResult res;
  for (int r = 0; r < config.runs; ++r) {
    auto& o = outputs[static_cast<std::size_t>(r)];
    res.rows.insert(res.rows.end(), o.rows.begin(), o.rows.end());
    res.sweep.insert(res.sweep.end(), o.sweep.begin(), o.sweep.end());
    res.seeds.push_back(run_seed(config.base_seed, r));
  }
  std::stable_sort(res.rows.begin(), res.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.run, a.n) < std::tie(b.run, b.n);
  });
  return res;
}

std::vector<SweepRow> sweep(const ExperimentConfig& config, long n, int threads) {
  if (n < 1) throw ConfigError("$.sweep_n: sweep sample size must be positive");
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<RunOutput> outputs(static_cast<std::size_t>(config.runs));
  for_each_run(config.runs, threads, [&](int r) {
    outputs[static_cast<std::size_t>(r)] = run_impl(config, r, false, n);
  });
  std::vector<SweepRow> rows;
  for (auto& o : outputs) rows.insert(rows.end(), o.sweep.begin(), o.sweep.end());
  return rows;
}

double geometric_mean(const std::vector<double>& values) {
  if (values.empty()) return kNaN;
  double s = 0.0;
  for (double v : values) {
    if (!(v > 0.0)) throw NumericalError("geometric mean needs positive values");
    s += std::log(v);
  }
  return std::exp(s / static_cast<double>(values.size()));
}

std::string rows_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "experiment_id,run,n,method,eta_hat,sq_risk,map_order,overconfidence,cum_bayes_log,"
      "cum_r_log,cum_i_log,delta_cum,hyper_margin,b_formula,note\n";
  for (const auto& r : rows) {
    out += csv_field(r.experiment_id) + "," + std::to_string(r.run) + "," + std::to_string(r.n) +
           "," + csv_field(r.method) + "," + format_number(r.eta_hat) + "," +
           format_number(r.sq_risk) + "," + format_number(r.map_order) + "," +
           format_number(r.overconfidence) + "," + format_number(r.cum_bayes_log) + "," +
           format_number(r.cum_r_log) + "," + format_number(r.cum_i_log) + "," +
           format_number(r.delta_cum) + "," + format_number(r.hyper_margin) + "," +
           csv_field(r.b_formula) + "," + csv_field(r.note) + "\n";
  }
  return out;
}

namespace {

struct Moments {
  std::vector<double> values;
  void add(double v) {
    if (!std::isnan(v)) values.push_back(v);
  }
  double mean() const {
    if (values.empty()) return kNaN;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  double sd() const {
    if (values.size() < 2) return kNaN;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

}  // namespace

std::string aggregate_csv(const std::vector<ResultRow>& rows) {
  struct Group {
    Moments eta, risk, map, over, bayes, rlog, ilog, delta, margin;
    int runs = 0;
  };
  std::map<std::pair<long, std::string>, Group> groups;
  for (const auto& r : rows) {
    Group& g = groups[{r.n, r.method}];
    ++g.runs;
    g.eta.add(r.eta_hat);
    g.risk.add(r.sq_risk);
    g.map.add(r.map_order);
    g.over.add(r.overconfidence);
    g.bayes.add(r.cum_bayes_log);
    g.rlog.add(r.cum_r_log);
    g.ilog.add(r.cum_i_log);
    g.delta.add(r.delta_cum);
    g.margin.add(r.hyper_margin);
  }
  std::string out =
      "n,method,runs,eta_hat_geomean,sq_risk_mean,sq_risk_sd,map_order_mean,map_order_sd,"
      "overconfidence_mean,overconfidence_sd,cum_bayes_log_mean,cum_bayes_log_sd,cum_r_log_mean,"
      "cum_r_log_sd,cum_i_log_mean,cum_i_log_sd,delta_cum_mean,delta_cum_sd,hyper_margin_mean,"
      "hyper_margin_sd\n";
  for (const auto& [key, g] : groups) {
    const double eta = g.eta.values.empty() ? kNaN : geometric_mean(g.eta.values);
    out += std::to_string(key.first) + "," + csv_field(key.second) + "," + std::to_string(g.runs) +
           "," + format_number(eta);
    for (const Moments* m : {&g.risk, &g.map, &g.over, &g.bayes, &g.rlog, &g.ilog, &g.delta,
                             &g.margin}) {
      out += "," + format_number(m->mean()) + "," + format_number(m->sd());
    }
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "run,n,eta,cum_r_log,cum_mix,cum_bayes_log,cum_optimal_log\n";
  for (const auto& r : rows) {
    out += std::to_string(r.run) + "," + std::to_string(r.n) + "," + format_number(r.eta) + "," +
           format_number(r.cum_r_log) + "," + format_number(r.cum_mix) + "," +
           format_number(r.cum_bayes_log) + "," + format_number(r.cum_optimal_log) + "\n";
  }
  return out;
}

const char* software_version() { return SAFEBAYES_VERSION; }

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  auto write = [&](const std::string& name, const std::string& body) {
    const auto path = out_dir / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << body;
    if (!f) throw Error("failed writing " + path.string());
  };
  write("rows.csv", rows_csv(result.rows));
  write("aggregate.csv", aggregate_csv(result.rows));
  write("sweep_eta.csv", sweep_csv(result.sweep));
  json manifest;
  manifest["software"] = "safebayes";
  manifest["version"] = software_version();
  manifest["config"] = json::parse(config.normalized_json());
  manifest["base_seed"] = config.base_seed;
  manifest["runs"] = config.runs;
  manifest["seeds"] = result.seeds;
  manifest["seed_rule"] = "seed(run) = mix64(base_seed, run), a splitmix64-finalizer composition";
  manifest["b_formula"] = std::string(to_string(config.model.b_formula));
  manifest["notes"] = {
      {"risk", "square-risk computed in closed form from the generator, no test sets"},
      {"aggregate", "mean and sample standard deviation over runs; eta_hat as geometric mean"},
      {"cv_prior", "cross-validation baselines and CV-for-eta hold the prior fixed across folds"},
      {"gcv_prior", "GCV hat matrix uses the eta = 1 posterior under the configured prior"},
      {"cv_schedule", "cv_square, cv_log and baselines are evaluated at sizes divisible by cv_every"}};
  write("manifest.json", manifest.dump(2) + "\n");
}

int resolve_threads(std::optional<int> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("SAFEBAYES_THREADS")) {
    int v = 0;
    const std::string s = env;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size() && v > 0) return v;
  }
  return 1;
}

}  // namespace safebayes
