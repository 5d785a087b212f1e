#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rebar/dataset.hpp"
#include "rebar/learners.hpp"

namespace rebar {

enum class Scenario { linear, nonlinear };

struct SimConfig {
  int n = 400;
  int p = 200;
  int target_n_t = 50;
  double kappa = 0.0;     // confounding through the non-matching covariates
  double rho = 0.0;       // eigenvalue decay of the covariance spectrum
  double beta_rate = 5.0; // exponential rate for the outcome coefficients
  Scenario scenario = Scenario::linear;
  std::uint64_t seed = 0;
};

struct SimTruth {
  Eigen::VectorXd y_c;
  Eigen::VectorXd y_t;
  Eigen::VectorXd tau;      // identically zero in both scenarios
  Eigen::VectorXd p_treat;  // per-unit assignment probabilities
  std::vector<int> regime;  // nonlinear: 1 = treatable outcome model
};

struct CovarianceModel {
  Eigen::MatrixXd rotation;    // p x p orthogonal
  Eigen::VectorXd eigenvalues; // exp(-rho * k), k = 1..p
  Eigen::MatrixXd dense() const;
};

// Random covariance with the specified spectrum: Q diag(exp(-rho k)) Q',
// Q Haar-distributed. Sampling should use the eigendecomposition directly;
// high-rho spectra are numerically singular.
CovarianceModel gen_covariance(int p, double rho, std::uint64_t seed);

std::pair<ObservationalDataset, SimTruth> gen_linear(const SimConfig& cfg);
std::pair<ObservationalDataset, SimTruth> gen_nonlinear(const SimConfig& cfg);

struct StudyConfig {
  SimConfig base;                       // n, p, target_n_t, beta_rate
  Scenario scenario = Scenario::linear;
  std::vector<double> kappas{0.0, 0.5};
  std::vector<double> rhos{0.0, 0.05};
  int n_runs = 100;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  int sl_folds = 5;
  int cem_bins = 5;
  int n_match_covariates = 5;
  int rf_trees = 100;      // desk-scale forest size
  int lasso_path = 100;
  int relax_max_controls = 4;  // nonlinear proximal-validation relaxation
  double pv_flag_ratio = 1.25;
};

struct StudyRow {
  double kappa = 0.0, rho = 0.0;
  int replication = 0;
  std::string design;     // psm / nn / cem
  std::string estimator;  // matching / rebar / adjusted / adjusted_rebar / ...
  double estimate = 0.0;
  double cv_r2 = 0.0;   // remnant CV R^2 of the fitted ensemble
  double mse_m = 0.0;   // oracle MSE of yhat against y_C in the matched set
  double r2_m = 0.0;
  int pv_flag = -1;     // -1 = not evaluated
};

struct StudyFailure {
  double kappa = 0.0, rho = 0.0;
  int replication = 0;
  std::string what;
};

struct StudySummaryRow {
  double kappa = 0.0, rho = 0.0;
  std::string design, estimator;
  int n_ok = 0;
  double bias = 0.0, sd = 0.0, rmse = 0.0, mc_se = 0.0;
  double mean_cv_r2 = 0.0;
  double pv_flag_rate = -1.0;
};

struct StudyResults {
  StudyConfig config;
  std::vector<StudyRow> rows;
  std::vector<StudyFailure> failures;
  std::vector<StudySummaryRow> summarize() const;
};

// Full estimator grid over the (kappa, rho) cells; failed replications are
// recorded and skipped. Deterministic for a fixed config and seed,
// independent of the worker count.
StudyResults run_study(const StudyConfig& cfg);

void write_results_csv(const std::string& path, const StudyResults& results);
void write_summary_csv(const std::string& path, const StudyResults& results);
void write_manifest_json(const std::string& path, const StudyConfig& cfg);

std::string scenario_name(Scenario s);

}  // namespace rebar
