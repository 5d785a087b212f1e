#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rebar/dataset.hpp"
#include "rebar/simulation.hpp"

namespace rebar {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitInfeasibleMatch = 3;
inline constexpr int kExitLeakage = 4;
inline constexpr int kExitInternal = 1;

struct AnalyzeOptions {
  std::string data_path;
  std::string out_dir = ".";
  std::string treatment_col;
  std::string outcome_col;
  std::string id_col;
  std::vector<std::string> match_covariates;
  bool impute_missing = false;

  std::string method = "psm";  // psm | nn | cem
  int max_controls = 1;
  std::optional<double> caliper;
  int bins = 5;
  int relax_max_controls = 0;  // >0 enables proximal validation
  double propensity_penalty = 0.16;

  std::vector<std::string> learners{"lasso", "random_forest"};
  int folds = 5;
  int perms = 999;
  double level = 0.95;
  std::uint64_t seed = 0;

  std::vector<double> assume_mse;  // bound grid; empty -> anchored to CV/PV
  std::optional<double> gamma;

  bool poison_learner = false;  // deliberately violates the leakage guard
  bool quiet = false;
};

struct ValidateOptions {
  std::string data_path;
  std::string out_dir = ".";
  std::string treatment_col, outcome_col, id_col;
  std::vector<std::string> match_covariates;
  bool impute_missing = false;
  std::string method = "psm";
  int max_controls = 1;
  std::optional<double> caliper;
  int relax_max_controls = 10;
  double propensity_penalty = 0.16;
  std::vector<std::string> learners{"lasso", "random_forest"};
  int folds = 5;
  std::uint64_t seed = 0;
  double flag_ratio = 1.25;
  bool quiet = false;
};

struct BoundOptions {
  std::string data_path;
  std::string out_dir = ".";
  std::string treatment_col, outcome_col, id_col;
  std::vector<std::string> match_covariates;
  bool impute_missing = false;
  std::string method = "psm";
  int max_controls = 1;
  std::optional<double> caliper;
  int bins = 5;
  double propensity_penalty = 0.16;
  std::vector<double> assume_mse{1.0};
  std::optional<double> gamma;
  std::optional<double> sd_yc;
  bool quiet = false;
};

struct SimulateOptions {
  StudyConfig study;
  std::string out_dir = ".";
  bool quiet = false;
};

int cmd_analyze(const AnalyzeOptions& options);
int cmd_validate(const ValidateOptions& options);
int cmd_bound(const BoundOptions& options);
int cmd_simulate(const SimulateOptions& options);

}  // namespace rebar
