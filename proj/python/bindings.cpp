#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rebar/bounds.hpp"
#include "rebar/dataset.hpp"
#include "rebar/diagnostics.hpp"
#include "rebar/estimators.hpp"
#include "rebar/inference.hpp"
#include "rebar/learners.hpp"
#include "rebar/matching.hpp"
#include "rebar/propensity.hpp"
#include "rebar/simulation.hpp"

namespace py = pybind11;
using namespace rebar;

namespace {

std::vector<LearnerConfig> library_from_names(
    const std::vector<std::string>& names) {
  std::vector<LearnerConfig> lib;
  for (const auto& n : names) lib.push_back(LearnerConfig::parse(n));
  return lib;
}

MatchSpec make_spec(const std::string& method, int max_controls,
                    std::optional<double> caliper, int bins) {
  MatchSpec spec;
  if (method == "optimal_pair" || method == "pair")
    spec = MatchSpec::pair(caliper);
  else if (method == "optimal_ratio" || method == "ratio")
    spec = MatchSpec::ratio(max_controls, caliper);
  else if (method == "nearest_neighbor" || method == "nn")
    spec.method = MatchMethod::nearest_neighbor;
  else if (method == "coarsened_exact" || method == "cem") {
    spec.method = MatchMethod::coarsened_exact;
    spec.bins = bins;
  } else {
    throw std::invalid_argument("unknown match method: " + method);
  }
  return spec;
}

}  // namespace

PYBIND11_MODULE(_rebar, m) {
  m.doc() = "matched observational studies with remnant-based residualization";

  py::register_exception<LeakageError>(m, "LeakageError");
  py::register_exception<MatchInfeasibleError>(m, "MatchInfeasibleError");

  py::class_<ObservationalDataset>(m, "Dataset")
      .def(py::init([](const Eigen::MatrixXd& x, const std::vector<int>& z,
                       const Eigen::VectorXd& y,
                       const std::vector<std::string>& covariate_names,
                       const std::vector<std::string>& unit_ids) {
             return make_dataset(x, z, y, covariate_names, unit_ids);
           }),
           py::arg("x"), py::arg("z"), py::arg("y"),
           py::arg("covariate_names") = std::vector<std::string>{},
           py::arg("unit_ids") = std::vector<std::string>{})
      .def_readonly("x", &ObservationalDataset::x)
      .def_readonly("z", &ObservationalDataset::z)
      .def_readonly("y", &ObservationalDataset::y)
      .def_readonly("covariate_names", &ObservationalDataset::covariate_names)
      .def_readonly("unit_ids", &ObservationalDataset::unit_ids)
      .def_property_readonly("n", &ObservationalDataset::n)
      .def_property_readonly("p", &ObservationalDataset::p)
      .def("n_treated", &ObservationalDataset::n_treated)
      .def("n_control", &ObservationalDataset::n_control);

  m.def(
      "load_dataset",
      [](const std::string& path, const std::string& treatment_col,
         const std::string& outcome_col, const std::string& id_col,
         bool impute_missing) {
        DatasetSchema schema;
        schema.treatment_column = treatment_col;
        schema.outcome_column = outcome_col;
        schema.id_column = id_col;
        schema.missing = impute_missing ? MissingPolicy::impute
                                        : MissingPolicy::reject;
        return load_dataset(path, schema);
      },
      py::arg("path"), py::arg("treatment_col"), py::arg("outcome_col"),
      py::arg("id_col") = "", py::arg("impute_missing") = false);
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));

  py::class_<MatchedSet>(m, "MatchedSet")
      .def_readonly("treated", &MatchedSet::treated)
      .def_readonly("controls", &MatchedSet::controls);

  py::class_<MatchAssignment>(m, "MatchAssignment")
      .def_readonly("sets", &MatchAssignment::sets)
      .def_readonly("remnant", &MatchAssignment::remnant)
      .def_readonly("dropped_treated", &MatchAssignment::dropped_treated)
      .def_readonly("control_reuse", &MatchAssignment::control_reuse)
      .def("n_treated_total", &MatchAssignment::n_treated_total)
      .def("n_matched_units", &MatchAssignment::n_matched_units)
      .def("matched_units", &MatchAssignment::matched_units);

  py::class_<PropensityModel>(m, "PropensityModel")
      .def_readonly("coefficients", &PropensityModel::coefficients)
      .def_readonly("logits", &PropensityModel::logits)
      .def_readonly("penalty", &PropensityModel::penalty)
      .def("probabilities", &PropensityModel::probabilities);

  m.def(
      "fit_propensity",
      [](const ObservationalDataset& ds, const std::vector<int>& cols,
         double penalty, bool standardize) {
        return fit_propensity(ds, cols, penalty, standardize);
      },
      py::arg("dataset"), py::arg("covariate_cols"),
      py::arg("penalty") = kDefaultPropensityPenalty,
      py::arg("standardize") = true);

  m.def(
      "optimal_match",
      [](const Eigen::VectorXd& logits, const std::vector<int>& z,
         int max_controls, std::optional<double> caliper) {
        return optimal_match(logits, z,
                             max_controls <= 1
                                 ? MatchSpec::pair(caliper)
                                 : MatchSpec::ratio(max_controls, caliper));
      },
      py::arg("logits"), py::arg("z"), py::arg("max_controls") = 1,
      py::arg("caliper") = std::nullopt);
  m.def("nearest_neighbor_match", &nearest_neighbor_match, py::arg("logits"),
        py::arg("z"));
  m.def("coarsened_exact_match", &coarsened_exact_match, py::arg("dataset"),
        py::arg("covariate_cols"), py::arg("bins") = 5);
  m.def(
      "relax_match",
      [](const Eigen::VectorXd& logits, const std::vector<int>& z,
         const std::string& method, int max_controls,
         std::optional<double> caliper, int relaxed_max_controls,
         std::optional<double> relaxed_caliper) {
        return relax_match(logits, z,
                           make_spec(method, max_controls, caliper, 5),
                           MatchSpec::ratio(relaxed_max_controls,
                                            relaxed_caliper));
      },
      py::arg("logits"), py::arg("z"), py::arg("method") = "pair",
      py::arg("max_controls") = 1, py::arg("caliper") = std::nullopt,
      py::arg("relaxed_max_controls") = 10,
      py::arg("relaxed_caliper") = std::nullopt);
  m.def("effective_sample_size", &effective_sample_size, py::arg("match"));
  m.def("split_remnant", &split_remnant, py::arg("dataset"), py::arg("match"));

  py::class_<EnsembleMember>(m, "EnsembleMember")
      .def_readonly("name", &EnsembleMember::name)
      .def_readonly("cv_rmse", &EnsembleMember::cv_rmse)
      .def_readonly("cv_r2", &EnsembleMember::cv_r2)
      .def_readonly("weight", &EnsembleMember::weight);

  py::class_<LearnerEnsemble>(m, "LearnerEnsemble")
      .def_readonly("weights", &LearnerEnsemble::weights)
      .def_readonly("cv_report", &LearnerEnsemble::cv_report)
      .def_readonly("cv_mse", &LearnerEnsemble::cv_mse)
      .def_readonly("cv_r2", &LearnerEnsemble::cv_r2)
      .def("predict", &LearnerEnsemble::predict, py::arg("x"));

  py::class_<PredictionSource>(m, "PredictionSource")
      .def(py::init([](const Eigen::VectorXd& yhat,
                       const std::vector<int>& trained_rows) {
             return PredictionSource{yhat, trained_rows};
           }),
           py::arg("yhat"), py::arg("trained_rows"))
      .def_readonly("yhat", &PredictionSource::yhat)
      .def_readonly("trained_rows", &PredictionSource::trained_rows);

  py::class_<RemnantFit>(m, "RemnantFit")
      .def_readonly("ensemble", &RemnantFit::ensemble)
      .def_readonly("source", &RemnantFit::source);

  m.def(
      "super_learner",
      [](const std::vector<std::string>& library, const Eigen::MatrixXd& x,
         const Eigen::VectorXd& y, int k_folds, std::uint64_t seed) {
        return super_learner(library_from_names(library), x, y, k_folds, seed);
      },
      py::arg("library"), py::arg("x"), py::arg("y"), py::arg("k_folds") = 5,
      py::arg("seed") = 0);
  m.def(
      "fit_remnant_model",
      [](const ObservationalDataset& ds, const MatchAssignment& match,
         const std::vector<std::string>& library, int k_folds,
         std::uint64_t seed) {
        return fit_remnant_model(ds, match, library_from_names(library),
                                 k_folds, seed);
      },
      py::arg("dataset"), py::arg("match"),
      py::arg("library") = std::vector<std::string>{"lasso", "random_forest"},
      py::arg("k_folds") = 5, py::arg("seed") = 0);

  m.def("matching_estimator", &matching_estimator, py::arg("y"), py::arg("z"),
        py::arg("match"));
  m.def("rebar_estimator", &rebar_estimator, py::arg("y"), py::arg("z"),
        py::arg("match"), py::arg("source"));
  m.def(
      "nn_att_estimator",
      [](const Eigen::VectorXd& y, const std::vector<int>& z,
         const MatchAssignment& match, const ObservationalDataset& ds,
         bool adjust, const std::vector<int>& covariate_cols) {
        NnAttOptions options;
        options.adjust = adjust;
        options.covariate_cols = covariate_cols;
        return nn_att_estimator(y, z, match, ds, options);
      },
      py::arg("y"), py::arg("z"), py::arg("match"), py::arg("dataset"),
      py::arg("adjust") = false,
      py::arg("covariate_cols") = std::vector<int>{});
  m.def(
      "regression_estimator",
      [](const Eigen::VectorXd& outcome, const std::vector<int>& z,
         const MatchAssignment& match, const ObservationalDataset& ds,
         const std::vector<int>& covariate_cols) {
        const RegressionEstimate est =
            regression_estimator(outcome, z, match, ds, covariate_cols);
        return py::make_tuple(est.coefficient, est.hc3_se,
                              est.ridge_fallback);
      },
      py::arg("outcome"), py::arg("z"), py::arg("match"), py::arg("dataset"),
      py::arg("covariate_cols") = std::vector<int>{});

  m.def("bound_constant", &bound_constant, py::arg("match"));
  m.def("gamma_multiplier", &gamma_multiplier, py::arg("gamma"));
  py::class_<BiasBound>(m, "BiasBound")
      .def_readonly("c_constant", &BiasBound::c_constant)
      .def_readonly("gamma", &BiasBound::gamma)
      .def_readonly("multiplier", &BiasBound::multiplier)
      .def_readonly("mse_input", &BiasBound::mse_input)
      .def_readonly("bound_abs_bias", &BiasBound::bound_abs_bias)
      .def_readonly("bound_standardized", &BiasBound::bound_standardized);
  m.def("bias_bound", &bias_bound, py::arg("match"), py::arg("mse_m"),
        py::arg("sd_yc") = std::nullopt, py::arg("gamma") = std::nullopt);

  py::class_<BalanceRow>(m, "BalanceRow")
      .def_readonly("name", &BalanceRow::name)
      .def_readonly("std_diff_unmatched", &BalanceRow::std_diff_unmatched)
      .def_readonly("std_diff_matched", &BalanceRow::std_diff_matched)
      .def_readonly("z_unmatched", &BalanceRow::z_unmatched)
      .def_readonly("z_matched", &BalanceRow::z_matched);
  m.def(
      "standardized_differences",
      [](const ObservationalDataset& ds, const std::vector<int>& cols,
         const MatchAssignment* match) {
        return standardized_differences(ds, cols, match);
      },
      py::arg("dataset"), py::arg("covariate_cols"),
      py::arg("match") = nullptr);
  m.def(
      "omnibus_balance_test",
      [](const ObservationalDataset& ds, const std::vector<int>& cols,
         const MatchAssignment* match, int n_perms, std::uint64_t seed) {
        return omnibus_balance_test(ds, cols, match, n_perms, seed);
      },
      py::arg("dataset"), py::arg("covariate_cols"),
      py::arg("match") = nullptr, py::arg("n_perms") = 999,
      py::arg("seed") = 0);
  m.def("yhat_balance", &yhat_balance, py::arg("dataset"), py::arg("match"),
        py::arg("source"), py::arg("n_perms") = 999, py::arg("seed") = 0);

  py::class_<ProximalValidationReport>(m, "ProximalValidationReport")
      .def_readonly("cv_mse", &ProximalValidationReport::cv_mse)
      .def_readonly("cv_r2", &ProximalValidationReport::cv_r2)
      .def_readonly("pv_mse", &ProximalValidationReport::pv_mse)
      .def_readonly("pv_r2", &ProximalValidationReport::pv_r2)
      .def_readonly("n_distal", &ProximalValidationReport::n_distal)
      .def_readonly("n_proximal", &ProximalValidationReport::n_proximal)
      .def_readonly("flag", &ProximalValidationReport::flag);
  m.def(
      "proximal_validation",
      [](const ObservationalDataset& ds, const MatchAssignment& match,
         const MatchAssignment& relaxed, const std::vector<std::string>& lib,
         int k_folds, std::uint64_t seed, double flag_ratio) {
        return proximal_validation(ds, match, relaxed,
                                   library_from_names(lib), k_folds, seed,
                                   flag_ratio);
      },
      py::arg("dataset"), py::arg("match"), py::arg("relaxed"),
      py::arg("library") = std::vector<std::string>{"lasso", "random_forest"},
      py::arg("k_folds") = 5, py::arg("seed") = 0,
      py::arg("flag_ratio") = 1.25);

  m.def(
      "permutation_test",
      [](const Eigen::VectorXd& y, const std::vector<int>& z,
         const MatchAssignment& match, int n_perms, bool exact,
         std::uint64_t seed) {
        PermutationPlan plan;
        plan.n_perms = n_perms;
        plan.exact = exact;
        plan.seed = seed;
        const Statistic stat = [&match](const Eigen::VectorXd& yy,
                                        const std::vector<int>& zz) {
          return matching_estimator(yy, zz, match);
        };
        return permutation_test(stat, y, z, match, plan);
      },
      py::arg("y"), py::arg("z"), py::arg("match"), py::arg("n_perms") = 999,
      py::arg("exact") = false, py::arg("seed") = 0);
  m.def(
      "permutation_ci",
      [](const Eigen::VectorXd& y, const std::vector<int>& z,
         const MatchAssignment& match, double level, int n_perms,
         std::uint64_t seed) {
        PermutationPlan plan;
        plan.n_perms = n_perms;
        plan.seed = seed;
        const Statistic stat = [&match](const Eigen::VectorXd& yy,
                                        const std::vector<int>& zz) {
          return matching_estimator(yy, zz, match);
        };
        return permutation_ci(stat, y, z, match, plan, level);
      },
      py::arg("y"), py::arg("z"), py::arg("match"), py::arg("level") = 0.95,
      py::arg("n_perms") = 999, py::arg("seed") = 0);

  py::class_<CovarianceModel>(m, "CovarianceModel")
      .def_readonly("rotation", &CovarianceModel::rotation)
      .def_readonly("eigenvalues", &CovarianceModel::eigenvalues)
      .def("dense", &CovarianceModel::dense);
  m.def("gen_covariance", &gen_covariance, py::arg("p"), py::arg("rho"),
        py::arg("seed") = 0);

  py::class_<SimTruth>(m, "SimTruth")
      .def_readonly("y_c", &SimTruth::y_c)
      .def_readonly("y_t", &SimTruth::y_t)
      .def_readonly("tau", &SimTruth::tau)
      .def_readonly("p_treat", &SimTruth::p_treat)
      .def_readonly("regime", &SimTruth::regime);

  m.def(
      "gen_linear",
      [](int n, int p, int target_n_t, double kappa, double rho,
         double beta_rate, std::uint64_t seed) {
        SimConfig cfg;
        cfg.n = n;
        cfg.p = p;
        cfg.target_n_t = target_n_t;
        cfg.kappa = kappa;
        cfg.rho = rho;
        cfg.beta_rate = beta_rate;
        cfg.seed = seed;
        return gen_linear(cfg);
      },
      py::arg("n") = 400, py::arg("p") = 200, py::arg("target_n_t") = 50,
      py::arg("kappa") = 0.0, py::arg("rho") = 0.0, py::arg("beta_rate") = 5.0,
      py::arg("seed") = 0);
  m.def(
      "gen_nonlinear",
      [](int n, int p, int target_n_t, double kappa, double rho,
         double beta_rate, std::uint64_t seed) {
        SimConfig cfg;
        cfg.n = n;
        cfg.p = p;
        cfg.target_n_t = target_n_t;
        cfg.kappa = kappa;
        cfg.rho = rho;
        cfg.beta_rate = beta_rate;
        cfg.seed = seed;
        return gen_nonlinear(cfg);
      },
      py::arg("n") = 400, py::arg("p") = 200, py::arg("target_n_t") = 50,
      py::arg("kappa") = 0.5, py::arg("rho") = 0.05, py::arg("beta_rate") = 5.0,
      py::arg("seed") = 0);

  py::class_<StudyRow>(m, "StudyRow")
      .def_readonly("kappa", &StudyRow::kappa)
      .def_readonly("rho", &StudyRow::rho)
      .def_readonly("replication", &StudyRow::replication)
      .def_readonly("design", &StudyRow::design)
      .def_readonly("estimator", &StudyRow::estimator)
      .def_readonly("estimate", &StudyRow::estimate)
      .def_readonly("cv_r2", &StudyRow::cv_r2)
      .def_readonly("mse_m", &StudyRow::mse_m)
      .def_readonly("r2_m", &StudyRow::r2_m)
      .def_readonly("pv_flag", &StudyRow::pv_flag);

  py::class_<StudySummaryRow>(m, "StudySummaryRow")
      .def_readonly("kappa", &StudySummaryRow::kappa)
      .def_readonly("rho", &StudySummaryRow::rho)
      .def_readonly("design", &StudySummaryRow::design)
      .def_readonly("estimator", &StudySummaryRow::estimator)
      .def_readonly("n_ok", &StudySummaryRow::n_ok)
      .def_readonly("bias", &StudySummaryRow::bias)
      .def_readonly("sd", &StudySummaryRow::sd)
      .def_readonly("rmse", &StudySummaryRow::rmse)
      .def_readonly("mc_se", &StudySummaryRow::mc_se)
      .def_readonly("mean_cv_r2", &StudySummaryRow::mean_cv_r2)
      .def_readonly("pv_flag_rate", &StudySummaryRow::pv_flag_rate);

  py::class_<StudyResults>(m, "StudyResults")
      .def_readonly("rows", &StudyResults::rows)
      .def("summarize", &StudyResults::summarize);

  m.def(
      "run_study",
      [](const std::string& scenario, int n, int p, int target_n_t,
         const std::vector<double>& kappas, const std::vector<double>& rhos,
         int runs, std::uint64_t seed, int threads, int rf_trees,
         int sl_folds) {
        StudyConfig cfg;
        cfg.scenario =
            scenario == "nonlinear" ? Scenario::nonlinear : Scenario::linear;
        cfg.base.scenario = cfg.scenario;
        cfg.base.n = n;
        cfg.base.p = p;
        cfg.base.target_n_t = target_n_t;
        cfg.kappas = kappas;
        cfg.rhos = rhos;
        cfg.n_runs = runs;
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.rf_trees = rf_trees;
        cfg.sl_folds = sl_folds;
        return run_study(cfg);
      },
      py::arg("scenario") = "linear", py::arg("n") = 400, py::arg("p") = 200,
      py::arg("target_n_t") = 50,
      py::arg("kappas") = std::vector<double>{0.0, 0.5},
      py::arg("rhos") = std::vector<double>{0.0, 0.05}, py::arg("runs") = 10,
      py::arg("seed") = 0, py::arg("threads") = 0, py::arg("rf_trees") = 100,
      py::arg("sl_folds") = 5);
}
