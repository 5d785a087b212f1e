// rebar: matched observational studies with remnant-based residualization.
//
// Subcommands: simulate, analyze, validate, bound. All options may also be
// supplied through a key=value config file (--config); explicit flags win.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rebar/commands.hpp"

namespace {

void add_data_options(CLI::App* cmd, std::string& data, std::string& treatment,
                      std::string& outcome, std::string& id,
                      std::vector<std::string>& covariates, bool& impute,
                      std::string& out_dir) {
  cmd->add_option("--data", data, "input CSV path")->required();
  cmd->add_option("--treatment-col", treatment, "treatment column (0/1)")
      ->required();
  cmd->add_option("--outcome-col", outcome, "outcome column")->required();
  cmd->add_option("--id-col", id, "unit id column");
  cmd->add_option("--match-covariates", covariates,
                  "columns used for matching")
      ->required()
      ->delimiter(',');
  cmd->add_flag("--impute-missing", impute,
                "mean-impute missing covariates and add indicators");
  cmd->add_option("--out-dir", out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"remnant-based residualization for matched studies"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override");

  rebar::AnalyzeOptions analyze;
  rebar::ValidateOptions validate;
  rebar::BoundOptions bound;
  rebar::SimulateOptions simulate;
  std::string scenario = "linear";

  auto* a = app.add_subcommand("analyze", "match, fit, diagnose, estimate");
  add_data_options(a, analyze.data_path, analyze.treatment_col,
                   analyze.outcome_col, analyze.id_col,
                   analyze.match_covariates, analyze.impute_missing,
                   analyze.out_dir);
  a->add_option("--method", analyze.method, "psm | nn | cem");
  a->add_option("--max-controls", analyze.max_controls,
                "controls per treated (psm)");
  double analyze_caliper = -1.0;
  a->add_option("--caliper", analyze_caliper, "logit caliper (psm)");
  a->add_option("--bins", analyze.bins, "bins per covariate (cem)");
  a->add_option("--relax-max-controls", analyze.relax_max_controls,
                "relaxed cap enabling proximal validation");
  a->add_option("--propensity-penalty", analyze.propensity_penalty,
                "ridge strength for the propensity fit");
  a->add_option("--learners", analyze.learners,
                "library: mean,ridge,lasso,bayes_lm,random_forest")
      ->delimiter(',');
  a->add_option("--folds", analyze.folds, "cross-validation folds");
  a->add_option("--perms", analyze.perms, "permutations for tests/CIs");
  a->add_option("--level", analyze.level, "confidence level");
  a->add_option("--seed", analyze.seed, "master seed");
  a->add_option("--assume-mse", analyze.assume_mse,
                "assumed MSE_M grid for the bias bounds")
      ->delimiter(',');
  double analyze_gamma = -1.0;
  a->add_option("--gamma", analyze_gamma, "Gamma for the pair-design bound");
  a->add_flag("--poison-learner", analyze.poison_learner,
              "testing hook: train on matched rows to trip the leakage guard")
      ->group("");
  a->add_flag("--quiet", analyze.quiet, "suppress stdout tables");

  auto* v = app.add_subcommand("validate", "proximal validation only");
  add_data_options(v, validate.data_path, validate.treatment_col,
                   validate.outcome_col, validate.id_col,
                   validate.match_covariates, validate.impute_missing,
                   validate.out_dir);
  v->add_option("--max-controls", validate.max_controls,
                "controls per treated (psm)");
  double validate_caliper = -1.0;
  v->add_option("--caliper", validate_caliper, "logit caliper");
  v->add_option("--relax-max-controls", validate.relax_max_controls,
                "relaxed control cap");
  v->add_option("--propensity-penalty", validate.propensity_penalty,
                "ridge strength for the propensity fit");
  v->add_option("--learners", validate.learners, "learner library")
      ->delimiter(',');
  v->add_option("--folds", validate.folds, "cross-validation folds");
  v->add_option("--seed", validate.seed, "master seed");
  v->add_option("--flag-ratio", validate.flag_ratio,
                "flag when pv_mse exceeds this multiple of cv_mse");
  v->add_flag("--quiet", validate.quiet, "suppress stdout");

  auto* b = app.add_subcommand("bound", "bias bounds for a match");
  add_data_options(b, bound.data_path, bound.treatment_col, bound.outcome_col,
                   bound.id_col, bound.match_covariates, bound.impute_missing,
                   bound.out_dir);
  b->add_option("--method", bound.method, "psm | cem");
  b->add_option("--max-controls", bound.max_controls,
                "controls per treated (psm)");
  double bound_caliper = -1.0;
  b->add_option("--caliper", bound_caliper, "logit caliper");
  b->add_option("--bins", bound.bins, "bins per covariate (cem)");
  b->add_option("--propensity-penalty", bound.propensity_penalty,
                "ridge strength for the propensity fit");
  b->add_option("--assume-mse", bound.assume_mse, "assumed MSE_M grid")
      ->delimiter(',');
  double bound_gamma = -1.0, bound_sd = -1.0;
  b->add_option("--gamma", bound_gamma, "Gamma for the pair-design bound");
  b->add_option("--sd-yc", bound_sd, "SD(y_C) for the standardized bound");
  b->add_flag("--quiet", bound.quiet, "suppress stdout");

  auto* s = app.add_subcommand("simulate", "run the simulation study");
  s->add_option("--scenario", scenario, "linear | nonlinear");
  s->add_option("--n", simulate.study.base.n, "units per replication");
  s->add_option("--p", simulate.study.base.p, "covariates");
  s->add_option("--target-n-t", simulate.study.base.target_n_t,
                "expected treated count");
  s->add_option("--beta-rate", simulate.study.base.beta_rate,
                "exponential rate of the outcome coefficients");
  s->add_option("--kappa", simulate.study.kappas, "confounding grid")
      ->delimiter(',');
  s->add_option("--rho", simulate.study.rhos, "spectral decay grid")
      ->delimiter(',');
  s->add_option("--runs", simulate.study.n_runs, "replications per cell");
  s->add_option("--seed", simulate.study.seed, "master seed");
  s->add_option("--threads", simulate.study.threads,
                "worker threads (0 = all cores)");
  s->add_option("--folds", simulate.study.sl_folds, "super learner folds");
  s->add_option("--bins", simulate.study.cem_bins, "cem bins");
  s->add_option("--rf-trees", simulate.study.rf_trees, "forest size");
  s->add_option("--lasso-path", simulate.study.lasso_path,
                "lasso path resolution");
  s->add_option("--relax-max-controls", simulate.study.relax_max_controls,
                "relaxed cap for nonlinear proximal validation");
  s->add_option("--out-dir", simulate.out_dir, "output directory");
  s->add_flag("--quiet", simulate.quiet, "suppress stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : rebar::kExitValidation;
  }

  if (analyze_caliper >= 0) analyze.caliper = analyze_caliper;
  if (analyze_gamma >= 0) analyze.gamma = analyze_gamma;
  if (validate_caliper >= 0) validate.caliper = validate_caliper;
  if (bound_caliper >= 0) bound.caliper = bound_caliper;
  if (bound_gamma >= 0) bound.gamma = bound_gamma;
  if (bound_sd >= 0) bound.sd_yc = bound_sd;

  std::string out_dir;
  int code = rebar::kExitValidation;
  if (a->parsed()) {
    code = rebar::cmd_analyze(analyze);
    out_dir = analyze.out_dir;
  } else if (v->parsed()) {
    code = rebar::cmd_validate(validate);
    out_dir = validate.out_dir;
  } else if (b->parsed()) {
    code = rebar::cmd_bound(bound);
    out_dir = bound.out_dir;
  } else if (s->parsed()) {
    if (scenario == "nonlinear")
      simulate.study.scenario = rebar::Scenario::nonlinear;
    else if (scenario != "linear") {
      std::cerr << "error: unknown scenario: " << scenario << "\n";
      return rebar::kExitValidation;
    }
    simulate.study.base.scenario = simulate.study.scenario;
    code = rebar::cmd_simulate(simulate);
    out_dir = simulate.out_dir;
  }

  // resolved configuration, reloadable via --config
  if (code == rebar::kExitOk && !out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream manifest(std::filesystem::path(out_dir) / "manifest.ini");
    manifest << app.config_to_str(true, false);
  }
  return code;
}
