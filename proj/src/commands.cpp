#include "rebar/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "rebar/diagnostics.hpp"
#include "rebar/estimators.hpp"
#include "rebar/inference.hpp"
#include "rebar/matching.hpp"
#include "rebar/propensity.hpp"
#include "rebar/report.hpp"

namespace rebar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int guarded(bool quiet, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const LeakageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitLeakage;
  } catch (const MatchInfeasibleError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitInfeasibleMatch;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitInternal;
  }
  (void)quiet;
}

std::vector<int> resolve_columns(const ObservationalDataset& ds,
                                 const std::vector<std::string>& names) {
  if (names.empty())
    throw std::invalid_argument("no matching covariates were named");
  std::vector<int> cols;
  for (const auto& name : names) {
    const int j = ds.column_index(name);
    if (j < 0)
      throw std::invalid_argument("unknown covariate column: " + name);
    cols.push_back(j);
  }
  return cols;
}

std::vector<LearnerConfig> resolve_learners(
    const std::vector<std::string>& names) {
  std::vector<LearnerConfig> library;
  for (const auto& n : names) library.push_back(LearnerConfig::parse(n));
  if (library.empty()) throw std::invalid_argument("empty learner library");
  return library;
}

struct LoadedAnalysis {
  ObservationalDataset ds;
  std::vector<int> match_cols;
  PropensityModel propensity;  // psm / nn only
  MatchAssignment match;
  std::optional<MatchAssignment> relaxed;
};

// The match is frozen from (X, Z) alone; outcomes stay out of reach of
// every step until the residual analysis.
template <typename Options>
LoadedAnalysis load_and_match_full(const Options& options, int bins,
                                   int relax_max_controls) {
  DatasetSchema schema;
  schema.treatment_column = options.treatment_col;
  schema.outcome_column = options.outcome_col;
  schema.id_column = options.id_col;
  schema.missing = options.impute_missing ? MissingPolicy::impute
                                          : MissingPolicy::reject;
  LoadedAnalysis loaded;
  loaded.ds = load_dataset(options.data_path, schema);
  loaded.match_cols = resolve_columns(loaded.ds, options.match_covariates);

  if (options.method == "cem") {
    loaded.match = coarsened_exact_match(loaded.ds, loaded.match_cols, bins);
    if (relax_max_controls > 0)
      throw std::invalid_argument(
          "proximal validation requires an optimal (psm) match");
    return loaded;
  }

  loaded.propensity = fit_propensity(loaded.ds, loaded.match_cols,
                                     options.propensity_penalty);
  if (options.method == "nn") {
    loaded.match = nearest_neighbor_match(loaded.propensity.logits,
                                          loaded.ds.z);
    if (relax_max_controls > 0)
      throw std::invalid_argument(
          "proximal validation requires an optimal (psm) match");
    return loaded;
  }
  if (options.method != "psm")
    throw std::invalid_argument("unknown match method: " + options.method);

  const MatchSpec spec = options.max_controls <= 1
                             ? MatchSpec::pair(options.caliper)
                             : MatchSpec::ratio(options.max_controls,
                                                options.caliper);
  if (relax_max_controls > 0) {
    if (relax_max_controls < options.max_controls)
      throw std::invalid_argument(
          "--relax-max-controls must be >= --max-controls");
    auto [base, big] =
        relax_match(loaded.propensity.logits, loaded.ds.z, spec,
                    MatchSpec::ratio(relax_max_controls, options.caliper));
    loaded.match = std::move(base);
    loaded.relaxed = std::move(big);
  } else {
    loaded.match = optimal_match(loaded.propensity.logits, loaded.ds.z, spec);
  }
  return loaded;
}

void write_balance_csv(const std::string& path, const BalanceReport& report) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "covariate,std_diff_unmatched,z_unmatched,std_diff_matched,"
         "z_matched\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g\n",
                  r.name.c_str(), r.std_diff_unmatched, r.z_unmatched,
                  r.std_diff_matched, r.z_matched);
    out << buf;
  }
}

json pv_to_json(const ProximalValidationReport& pv) {
  json j;
  j["cv_mse"] = pv.cv_mse;
  j["cv_r2"] = pv.cv_r2;
  j["pv_mse"] = pv.pv_mse;
  j["pv_r2"] = pv.pv_r2;
  j["n_distal"] = pv.n_distal;
  j["n_proximal"] = pv.n_proximal;
  j["flag"] = pv.flag;
  return j;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

int cmd_analyze(const AnalyzeOptions& options) {
  return guarded(options.quiet, [&] {
    fs::create_directories(options.out_dir);
    LoadedAnalysis loaded =
        load_and_match_full(options, options.bins, options.relax_max_controls);
    const ObservationalDataset& ds = loaded.ds;
    const MatchAssignment& m = loaded.match;

    auto [matched_units, remnant] = split_remnant(ds, m);
    if (remnant.size() < 2)
      throw std::invalid_argument(
          "empty (or single-unit) remnant: nothing to train on");

    const std::vector<LearnerConfig> library =
        resolve_learners(options.learners);
    RemnantFit fit =
        fit_remnant_model(ds, m, library, options.folds, options.seed);
    if (options.poison_learner) {
      // testing hook: refit on remnant plus matched rows so the guard trips
      std::vector<int> rows = remnant;
      rows.insert(rows.end(), matched_units.begin(), matched_units.end());
      std::sort(rows.begin(), rows.end());
      Eigen::MatrixXd x(rows.size(), ds.p());
      Eigen::VectorXd y(rows.size());
      for (size_t i = 0; i < rows.size(); ++i) {
        x.row(i) = ds.x.row(rows[i]);
        y[i] = ds.y[rows[i]];
      }
      fit.ensemble = super_learner(library, x, y, options.folds, options.seed);
      fit.source.yhat = fit.ensemble.predict(ds.x);
      fit.source.trained_rows = rows;
    }

    const int n_perms = options.perms;
    const BalanceReport balance =
        balance_report(ds, loaded.match_cols, m, n_perms, options.seed + 1);
    const auto [yhat_sd, yhat_p] =
        yhat_balance(ds, m, fit.source, n_perms, options.seed + 2);

    std::optional<ProximalValidationReport> pv;
    if (loaded.relaxed)
      pv = proximal_validation(ds, m, *loaded.relaxed, library, options.folds,
                               options.seed + 3);

    // the guard runs before any effect estimate is formed or printed
    require_remnant_only(fit.source, m);
    const Eigen::VectorXd e = ds.y - fit.source.yhat;

    const Statistic stat = [&m](const Eigen::VectorXd& y,
                                const std::vector<int>& z) {
      return matching_estimator(y, z, m);
    };
    PermutationPlan plan;
    plan.n_perms = n_perms;
    plan.seed = options.seed + 4;

    EstimateReport matching;
    matching.method = "matching";
    matching.point = matching_estimator(ds.y, ds.z, m);
    matching.se = regression_estimator(ds.y, ds.z, m, ds, {}).hc3_se;
    matching.p_value = permutation_test(stat, ds.y, ds.z, m, plan);
    matching.ci = permutation_ci(stat, ds.y, ds.z, m, plan, options.level);

    EstimateReport rebar;
    rebar.method = "rebar";
    rebar.point = rebar_estimator(ds.y, ds.z, m, fit.source);
    rebar.se = regression_estimator(e, ds.z, m, ds, {}).hc3_se;
    rebar.p_value = permutation_test(stat, e, ds.z, m, plan);
    rebar.ci = permutation_ci(stat, e, ds.z, m, plan, options.level);

    std::vector<double> mse_grid = options.assume_mse;
    if (mse_grid.empty()) {
      mse_grid.push_back(fit.ensemble.cv_mse);
      if (pv) mse_grid.push_back(pv->pv_mse);
    }
    for (double mse : mse_grid)
      rebar.bounds.push_back(bias_bound(m, mse, std::nullopt, options.gamma));

    json report;
    report["data"] = options.data_path;
    report["method"] = options.method;
    report["n"] = ds.n();
    report["n_treated"] = ds.n_treated();
    report["n_matched"] = m.n_matched_units();
    report["n_remnant"] = static_cast<int>(remnant.size());
    report["effective_sample_size"] = effective_sample_size(m);
    report["dropped_treated"] = static_cast<int>(m.dropped_treated.size());
    report["estimand_changed"] = !m.dropped_treated.empty();
    report["omnibus_p_unmatched"] = balance.omnibus_p_unmatched;
    report["omnibus_p_matched"] = balance.omnibus_p_matched;
    report["yhat_balance_std_diff"] = yhat_sd;
    report["yhat_balance_p"] = yhat_p;
    report["ensemble"] = json::array();
    for (const auto& member : fit.ensemble.cv_report)
      report["ensemble"].push_back({{"learner", member.name},
                                    {"cv_rmse", member.cv_rmse},
                                    {"cv_r2", member.cv_r2},
                                    {"weight", member.weight}});
    report["cv_mse"] = fit.ensemble.cv_mse;
    report["cv_r2"] = fit.ensemble.cv_r2;
    if (pv) report["proximal_validation"] = pv_to_json(*pv);
    report["estimates"] = {matching.to_json(), rebar.to_json()};

    json manifest;
    manifest["command"] = "analyze";
    manifest["data"] = options.data_path;
    manifest["treatment_col"] = options.treatment_col;
    manifest["outcome_col"] = options.outcome_col;
    manifest["id_col"] = options.id_col;
    manifest["match_covariates"] = options.match_covariates;
    manifest["impute_missing"] = options.impute_missing;
    manifest["method"] = options.method;
    manifest["max_controls"] = options.max_controls;
    if (options.caliper) manifest["caliper"] = *options.caliper;
    manifest["bins"] = options.bins;
    manifest["relax_max_controls"] = options.relax_max_controls;
    manifest["propensity_penalty"] = options.propensity_penalty;
    manifest["learners"] = options.learners;
    manifest["folds"] = options.folds;
    manifest["perms"] = options.perms;
    manifest["level"] = options.level;
    manifest["seed"] = options.seed;
    manifest["assume_mse"] = options.assume_mse;
    if (options.gamma) manifest["gamma"] = *options.gamma;
    report["manifest"] = manifest;

    write_json((fs::path(options.out_dir) / "report.json").string(), report);
    write_balance_csv((fs::path(options.out_dir) / "balance.csv").string(),
                      balance);
    write_match_csv((fs::path(options.out_dir) / "match.csv").string(), ds, m);

    if (!options.quiet) {
      std::cout << "matched sets: " << m.sets.size()
                << "  remnant: " << remnant.size()
                << "  ESS: " << effective_sample_size(m) << "\n";
      if (!m.dropped_treated.empty())
        std::cout << "warning: " << m.dropped_treated.size()
                  << " treated unit(s) dropped; the estimand has changed\n";
      std::cout << "omnibus balance p: unmatched "
                << balance.omnibus_p_unmatched << ", matched "
                << balance.omnibus_p_matched << "\n";
      std::cout << "yhat balance: std diff " << yhat_sd << ", p " << yhat_p
                << "\n";
      if (pv) {
        std::cout << "proximal validation: cv_mse " << pv->cv_mse
                  << ", pv_mse " << pv->pv_mse << (pv->flag ? "  [FLAG]" : "")
                  << "\n";
        if (pv->flag)
          std::cout << "warning: prediction model extrapolates poorly toward "
                       "the matched sample\n";
      }
      std::cout << "\n"
                << render_estimate_table({matching, rebar}, options.level);
    }
  });
}

int cmd_validate(const ValidateOptions& options) {
  return guarded(options.quiet, [&] {
    fs::create_directories(options.out_dir);
    if (options.relax_max_controls <= 0)
      throw std::invalid_argument("validate: --relax-max-controls required");
    LoadedAnalysis loaded =
        load_and_match_full(options, 5, options.relax_max_controls);
    const ProximalValidationReport pv = proximal_validation(
        loaded.ds, loaded.match, *loaded.relaxed,
        resolve_learners(options.learners), options.folds, options.seed,
        options.flag_ratio);
    write_json((fs::path(options.out_dir) / "validate.json").string(),
               pv_to_json(pv));
    if (!options.quiet) {
      std::cout << "distal: " << pv.n_distal << "  proximal: " << pv.n_proximal
                << "\ncv_mse: " << pv.cv_mse << "  cv_r2: " << pv.cv_r2
                << "\npv_mse: " << pv.pv_mse << "  pv_r2: " << pv.pv_r2
                << "\n";
      if (pv.flag)
        std::cout << "warning: proximal validation flag fired (pv_mse > "
                  << options.flag_ratio << " * cv_mse)\n";
    }
  });
}

int cmd_bound(const BoundOptions& options) {
  return guarded(options.quiet, [&] {
    fs::create_directories(options.out_dir);
    if (options.method == "nn")
      throw std::invalid_argument(
          "bound: needs a without-replacement match (psm or cem)");
    LoadedAnalysis loaded = load_and_match_full(options, options.bins, 0);
    json out;
    out["c_constant"] = bound_constant(loaded.match);
    out["pair_design"] = is_pair_design(loaded.match);
    out["bounds"] = json::array();
    if (!options.quiet)
      std::cout << "C(n, n_T, n_C) = " << bound_constant(loaded.match) << "\n";
    for (double mse : options.assume_mse) {
      const BiasBound b =
          bias_bound(loaded.match, mse, options.sd_yc, options.gamma);
      out["bounds"].push_back(bound_to_json(b));
      if (!options.quiet) {
        std::cout << "assumed MSE_M = " << mse << " -> |bias| <= "
                  << b.bound_abs_bias;
        if (b.gamma) std::cout << "  (Gamma multiplier " << b.multiplier << ")";
        std::cout << "\n";
      }
    }
    write_json((fs::path(options.out_dir) / "bounds.json").string(), out);
  });
}

int cmd_simulate(const SimulateOptions& options) {
  return guarded(options.quiet, [&] {
    const StudyConfig& cfg = options.study;
    if (cfg.base.n < 2 || cfg.base.p < 6)
      throw std::invalid_argument("simulate: n must be >= 2 and p >= 6");
    if (cfg.base.target_n_t < 1 || 2 * cfg.base.target_n_t >= cfg.base.n)
      throw std::invalid_argument("simulate: need 1 <= target_n_t < n/2");
    if (cfg.n_runs < 1) throw std::invalid_argument("simulate: runs must be >= 1");
    for (double k : cfg.kappas)
      if (k < 0) throw std::invalid_argument("simulate: kappa must be >= 0");
    for (double r : cfg.rhos)
      if (r < 0) throw std::invalid_argument("simulate: rho must be >= 0");

    fs::create_directories(options.out_dir);
    const StudyResults results = run_study(cfg);
    write_results_csv((fs::path(options.out_dir) / "results.csv").string(),
                      results);
    write_summary_csv((fs::path(options.out_dir) / "summary.csv").string(),
                      results);
    write_manifest_json((fs::path(options.out_dir) / "manifest.json").string(),
                        cfg);
    if (!options.quiet) {
      std::cout << "rows: " << results.rows.size()
                << "  failures: " << results.failures.size() << "\n";
      std::cout << "wrote results.csv, summary.csv, manifest.json to "
                << options.out_dir << "\n";
    }
  });
}

}  // namespace rebar
