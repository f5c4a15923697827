#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "safebayes/eta_learners.hpp"
#include "safebayes/ground_truth.hpp"

namespace safebayes {

inline constexpr const char* kMethodNames[] = {
    "bayes",           "r_log_safebayes", "i_log_safebayes", "r_square_safebayes",
    "i_square_safebayes", "discounted_r_log", "empirical_bayes", "cv_square",
    "cv_log",          "map_variants",    "cesaro_variants", "baselines"};

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  Generator generator;
  ModelConfig model;
  std::string prior_name = "informative";
  EtaGridSpec grid;
  std::vector<std::string> methods = {"bayes", "r_log_safebayes", "i_log_safebayes"};
  double discount_fraction = 0.5;
  long n_max = 250;
  /// Every n in 0..dense_until, then every `eval_step` up to n_max.
  long dense_until = 100;
  long eval_step = 5;
  /// Explicit evaluation sizes; replaces the dense/step rule when set.
  std::optional<std::vector<long>> eval_sizes;
  /// Cross-validation and baseline methods run at eval sizes divisible by this.
  long cv_every = 10;
  int kfold = 10;
  /// Sample size of the per-eta loss sweep; 0 disables it.
  long sweep_n = 100;
  int runs = 30;
  std::uint64_t base_seed = 20240101;
  bool centering = false;

  bool has_method(const std::string& name) const;
  std::vector<long> evaluation_sizes() const;
  /// The document this config was read from, normalized with defaults.
  std::string normalized_json() const;
};

/// Parse and validate a JSON config document. Unknown keys and invalid
/// values raise ConfigError with a path such as `$.model.variance.shape`.
ExperimentConfig load_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ResultRow {
  std::string experiment_id;
  int run = 0;
  long n = 0;
  std::string method;
  double eta_hat = 0.0;
  double sq_risk = 0.0;
  double map_order = 0.0;
  double overconfidence = 0.0;
  double cum_bayes_log = 0.0;
  double cum_r_log = 0.0;
  double cum_i_log = 0.0;
  double delta_cum = 0.0;
  double hyper_margin = 0.0;
  std::string b_formula;
  std::string note;  ///< reason for NA entries, empty otherwise
};

struct SweepRow {
  int run = 0;
  long n = 0;
  double eta = 0.0;
  double cum_r_log = 0.0;
  double cum_mix = 0.0;
  double cum_bayes_log = 0.0;
  double cum_optimal_log = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<SweepRow> sweep;
  std::vector<std::uint64_t> seeds;
};

/// Seed of run r: mix64(base_seed, r).
std::uint64_t run_seed(std::uint64_t base_seed, int run);

/// One run; rows in canonical order.
ExperimentResult run_single(const ExperimentConfig& config, int run);

/// All runs on `threads` worker threads (0 = hardware concurrency). The
/// output does not depend on the thread count.
ExperimentResult run_matrix(const ExperimentConfig& config, int threads = 1);

/// Per-eta cumulative losses at sample size n for every run.
std::vector<SweepRow> sweep(const ExperimentConfig& config, long n, int threads = 1);

/// Writes rows.csv, aggregate.csv, sweep_eta.csv and manifest.json.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& out_dir);

std::string rows_csv(const std::vector<ResultRow>& rows);
std::string aggregate_csv(const std::vector<ResultRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Geometric mean of positive values.
double geometric_mean(const std::vector<double>& values);

/// Thread count from an explicit request, else SAFEBAYES_THREADS, else 1.
int resolve_threads(std::optional<int> requested);

const char* software_version();

}  // namespace safebayes
