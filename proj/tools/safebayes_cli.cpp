#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "safebayes/conjugate_linear.hpp"
#include "safebayes/diagnostics.hpp"
#include "safebayes/errors.hpp"
#include "safebayes/experiment.hpp"
#include "safebayes/numeric.hpp"

using namespace safebayes;

namespace {

// Trapezoid integral of g over [lo, hi] with m panels.
template <typename G>
double integrate(G&& g, double lo, double hi, int m) {
  const double h = (hi - lo) / m;
  double s = 0.5 * (g(lo) + g(hi));
  for (int i = 1; i < m; ++i) s += g(lo + i * h);
  return s * h;
}

int oracle_check() {
  int failures = 0;
  auto report = [&](const char* what, double got, double want, double tol) {
    const bool ok = std::abs(got - want) <= tol;
    if (!ok) ++failures;
    std::printf("%-44s %s  got %.12g  want %.12g\n", what, ok ? "ok  " : "FAIL", got, want);
  };

  // One point (x = 1, y = 2) under beta ~ N(0, 1), sigma^2 = 1, eta = 1.
  PosteriorState s(isotropic_prior(0, 1.0, FixedVariance{1.0}), 1.0);
  Eigen::VectorXd x(1);
  x << 1.0;
  s.update(x, 2.0);
  report("precision", s.precision()(0, 0), 2.0, 1e-14);
  report("posterior mean", s.mean()[0], 1.0, 1e-14);
  report("posterior variance", s.covariance()(0, 0), 0.5, 1e-14);

  // Quadrature over beta for the next point (x = 1, y = 0.3) at eta' = 1/2.
  const double y = 0.3, eta_flat = 0.5;
  auto post = [&](double b) { return std::exp(-(b - 1.0) * (b - 1.0)) / std::sqrt(M_PI); };
  auto dens = [&](double b) { return std::exp(-0.5 * (y - b) * (y - b)) / std::sqrt(2.0 * M_PI); };
  const LossRecord rec = step_losses(s, x, y, eta_flat);
  const double r_log = integrate([&](double b) { return post(b) * -std::log(dens(b)); }, -12, 14, 20000);
  const double mix = -std::log(integrate([&](double b) { return post(b) * std::pow(dens(b), eta_flat); },
                                         -12, 14, 20000)) /
                     eta_flat;
  report("r_log by quadrature", rec.r_log, r_log, 1e-9);
  report("mix loss by quadrature", rec.mix, mix, 1e-9);

  // Normal-inverse-gamma: integrate over sigma^2 as well.
  PosteriorState g(isotropic_prior(0, 1.0, InverseGammaVariance{2.0, 0.5}), 1.0);
  g.update(x, 2.0);
  const double a = g.shape(), bsc = g.scale(), m = g.mean()[0], v = g.covariance()(0, 0);
  auto joint = [&](double s2, double b) {
    const double ig = std::exp(a * std::log(bsc) - std::lgamma(a) - (a + 1.0) * std::log(s2) - bsc / s2);
    const double nb = std::exp(-(b - m) * (b - m) / (2.0 * s2 * v)) / std::sqrt(2.0 * M_PI * s2 * v);
    const double w = ig * nb;
    return w > 0.0 ? w : 0.0;
  };
  auto normal = [&](double s2, double b) {
    return std::exp(-(y - b) * (y - b) / (2.0 * s2)) / std::sqrt(2.0 * M_PI * s2);
  };
  auto outer = [&](auto&& h) {
    // sigma^2 = exp(t), dt measure.
    return integrate(
        [&](double t) {
          const double s2 = std::exp(t);
          const double sd = std::sqrt(s2 * v);
          return s2 * integrate([&](double b) { return joint(s2, b) * h(s2, b); }, m - 12 * sd, m + 12 * sd, 400);
        },
        -12.0, 6.0, 1200);
  };
  const LossRecord nig = step_losses(g, x, y, eta_flat);
  report("NIG r_log by quadrature", nig.r_log,
         outer([&](double s2, double b) { return 0.5 * std::log(2.0 * M_PI * s2) + (y - b) * (y - b) / (2.0 * s2); }), 1e-6);
  report("NIG mix loss by quadrature", nig.mix,
         -std::log(outer([&](double s2, double b) { return std::pow(normal(s2, b), eta_flat); })) / eta_flat,
         1e-6);
  std::printf("%s\n", failures == 0 ? "oracle-check passed" : "oracle-check FAILED");
  return failures == 0 ? 0 : 2;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--n-list: expected comma-separated positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("--n-list: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized-Bayes linear regression with SafeBayes learning-rate selection"};
  app.set_version_flag("--version", std::string(software_version()));
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<int> runs, threads;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run an experiment matrix and write CSV outputs");
  run->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--runs", runs, "Override the number of runs");
  run->add_option("--seed", seed, "Override the base seed");
  run->add_option("--threads", threads, "Worker threads (default: SAFEBAYES_THREADS or 1)");

  long sweep_n = 100;
  std::string sweep_out;
  auto* sw = app.add_subcommand("sweep-eta", "Cumulative losses at a fixed n for every grid eta");
  sw->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  sw->add_option("--n", sweep_n, "Sample size")->check(CLI::PositiveNumber);
  sw->add_option("--out", sweep_out, "CSV file (default: stdout)");
  sw->add_option("--runs", runs, "Override the number of runs");
  sw->add_option("--threads", threads, "Worker threads");

  double theta_star = 0.5;
  std::string n_list = "10,100,1000";
  long trials = 1000;
  std::uint64_t toy_seed = 1;
  auto* toy = app.add_subcommand("bernoulli", "Two-point Bernoulli model with Bayes predictions");
  toy->add_option("--theta-star", theta_star, "Success probability of the truth")->check(CLI::Range(0.0, 1.0));
  toy->add_option("--n-list", n_list, "Comma-separated sample sizes");
  toy->add_option("--trials", trials, "Monte Carlo trials")->check(CLI::PositiveNumber);
  toy->add_option("--seed", toy_seed, "Seed");
  toy->add_option("--threads", threads, "Worker threads");

  auto* oracle = app.add_subcommand("oracle-check", "Compare closed forms against quadrature");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      if (runs) {
        if (*runs < 1) throw ConfigError("--runs: must be at least 1");
        cfg.runs = *runs;
      }
      if (seed) cfg.base_seed = *seed;
      const ExperimentResult res = run_matrix(cfg, resolve_threads(threads));
      write_outputs(cfg, res, out_dir);
      std::cerr << "wrote " << res.rows.size() << " rows to " << out_dir << "\n";
    } else if (sw->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      if (runs) {
        if (*runs < 1) throw ConfigError("--runs: must be at least 1");
        cfg.runs = *runs;
      }
      const std::string csv = sweep_csv(sweep(cfg, sweep_n, resolve_threads(threads)));
      if (sweep_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream f(sweep_out, std::ios::binary);
        if (!f) throw Error("cannot write " + sweep_out);
        f << csv;
      }
    } else if (toy->parsed()) {
      const BernoulliToyResult r =
          bernoulli_toy(theta_star, parse_int_list(n_list), trials, toy_seed, resolve_threads(threads));
      std::printf("n,P(|L|>sqrt(n)/2),P(L<0),P(L<=0),mean|L|,mean_L,mean_gap\n");
      for (const auto& lv : r.levels) {
        std::printf("%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", lv.n, lv.prob_abs_l_large, lv.prob_l_negative,
                    lv.prob_l_nonpositive,
                    lv.mean_abs_l, lv.mean_l, lv.mean_gap);
      }
      std::printf("# expected-gap bound violations: %ld of %ld steps\n", r.bound_violations, r.bound_checks);
      std::printf("# realized-gap bound violations: %ld of %ld steps\n", r.realized_bound_violations,
                  r.bound_checks);
      std::printf("# max expected gap / min posterior: %.6g (bound %.6g)\n", r.max_expected_ratio,
                  2.0 * (std::exp(1.0) - 2.0));
      std::printf("# max realized gap / min posterior: %.6g\n", r.max_realized_ratio);
    } else if (oracle->parsed()) {
      return oracle_check();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
