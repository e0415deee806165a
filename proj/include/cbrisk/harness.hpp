#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cbrisk/analysis.hpp"
#include "cbrisk/config.hpp"
#include "cbrisk/gaussian_model.hpp"
#include "cbrisk/predictors.hpp"
#include "cbrisk/rng.hpp"

namespace cbrisk {

/// Resolved experiment settings. scale_factor uniformly shrinks n, p and the
/// repetition count for desk-scale reruns; it is applied once, here.
struct ExperimentConfig {
  std::string experiment = "figure1";
  int n = 100;
  int p = 200;
  int s = 5;
  double snr = 0.4;
  int B = 100;
  std::vector<double> alphas{0.05, 0.1, 0.2, 0.5, 0.8, 1.0};
  int reps = 100;
  RngSeed seed{42, 0};
  std::vector<std::string> predictor_specs{"ridge:5", "lasso:0.31",
                                           "stepwise:2", "lasso_cv"};
  double scale_factor = 1.0;

  std::int64_t oracle_reps = 100000;
  std::int64_t oracle_reps_cv = 0;  // 0 -> oracle_reps
  int cv_folds = 10;
  int cv_n_lambda = 20;
  double cv_min_ratio = 0.01;

  // Degrees-of-freedom paths.
  double df_alpha = 0.1;
  int path_n_lambda = 50;
  double path_min_ratio = 0.001;
  int path_max_steps = 20;

  // 1-D denoising.
  int denoise_n = 256;
  double denoise_snr = 4.0;
  std::vector<double> denoise_levels{0.0, 4.0, 2.0, 6.0};
  std::vector<double> denoise_alphas{0.05, 0.1, 0.2, 0.5};
  int denoise_n_lambda = 30;
  int denoise_reps = 20;

  // Bias / variance studies.
  std::vector<int> bias_steps{3, 10, 90};
  std::vector<int> rvar_grid_B{10, 20, 40, 80, 160};
  std::int64_t rvar_outer = 400;
  std::int64_t bv_outer = 400;
  int bv_inner = 40;

  Config raw;  // resolved source document, for the hash and the sidecar

  static ExperimentConfig resolve(const Config& cfg);
  std::string hash() const { return raw.hash(); }
};

/// Fixed simulation truth: X and beta are drawn once and then frozen across
/// repetitions; sigma2 is set from the target signal-to-noise ratio.
struct ScenarioTruth {
  Eigen::MatrixXd X;
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  Eigen::VectorXd theta;
};

ScenarioTruth build_scenario(const ExperimentConfig& cfg, RngSeed rng);

/// Deterministic fold assignment for n rows (permutation from the seed).
std::vector<int> make_fold_assignment(int n, int n_folds, RngSeed rng);

struct ResultRow {
  std::string scenario;
  std::string predictor;
  std::string estimator;
  double alpha = 0.0;
  int rep = 0;
  double estimate = 0.0;
  double oracle_risk = 0.0;        // target at the original noise level
  double oracle_risk_alpha = 0.0;  // target at the elevated level
  std::uint64_t draw_checksum = 0;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ExperimentResult {
  std::string name;
  std::vector<ResultRow> rows;
  std::vector<Table> tables;     // analysis-style outputs, one CSV each
  std::string summary_json;      // extra summary block for the sidecar
};

ExperimentResult run_figure1(const ExperimentConfig& cfg);
ExperimentResult run_figure2(const ExperimentConfig& cfg);
ExperimentResult run_df_figure(const ExperimentConfig& cfg);
ExperimentResult run_denoise(const ExperimentConfig& cfg);
ExperimentResult run_appendixF(const ExperimentConfig& cfg);
ExperimentResult run_analyze(const ExperimentConfig& cfg);

/// Dispatch on cfg.experiment.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Rows CSV: header, comma separators, '.' decimal, LF line endings, plus the
/// config-hash column. Byte-identical output for identical configs.
void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows,
                    const std::string& config_hash);
void write_table_csv(const std::string& path, const Table& table);
/// JSON sidecar with the fully resolved config and the experiment summary.
void write_sidecar(const std::string& path, const ExperimentConfig& cfg,
                   const std::string& summary_json);

/// Writes all outputs for one experiment into out_dir; returns the list of
/// files written.
std::vector<std::string> write_experiment(const std::string& out_dir,
                                          const ExperimentConfig& cfg,
                                          const ExperimentResult& result);

/// Piecewise-constant test signal for the denoising experiment.
Eigen::VectorXd denoise_signal(int n, const std::vector<double>& levels);

}  // namespace cbrisk
