#include "rebar/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "rebar/diagnostics.hpp"
#include "rebar/estimators.hpp"
#include "rebar/matching.hpp"
#include "rebar/propensity.hpp"
#include "rebar/rng.hpp"

namespace rebar {
namespace {

double expit(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x))
               : std::exp(x) / (1.0 + std::exp(x));
}

Eigen::MatrixXd sample_rows(const CovarianceModel& cov, int n,
                            std::mt19937_64& rng) {
  const int p = static_cast<int>(cov.eigenvalues.size());
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) g(i, j) = gauss(rng);
  const Eigen::VectorXd root = cov.eigenvalues.cwiseSqrt();
  return g * root.asDiagonal() * cov.rotation.transpose();
}

// mean probability target_n_t/n is hit by bisection on the intercept
double calibrate_intercept(const Eigen::VectorXd& eta, double target_mean) {
  double lo = -50.0, hi = 50.0;
  auto mean_prob = [&](double alpha) {
    double s = 0.0;
    for (int i = 0; i < eta.size(); ++i) s += expit(alpha + eta[i]);
    return s / eta.size();
  };
  if (mean_prob(lo) > target_mean || mean_prob(hi) < target_mean)
    throw std::runtime_error("gen: intercept calibration bracket failed");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = mean_prob(mid) - target_mean;
    if (std::abs(f) < 1e-10) return mid;
    (f < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct GenParts {
  Eigen::MatrixXd x;
  Eigen::VectorXd beta;     // coefficients for columns 6..p
  Eigen::VectorXd eps;
  Eigen::VectorXd eta;      // treatment-model linear predictor (no intercept)
  Eigen::VectorXd outcome_lin;  // 1'x_{1:5} + beta'x_{6:p}
};

GenParts gen_parts(const SimConfig& cfg) {
  if (cfg.p < 6) throw std::invalid_argument("gen: p must be >= 6");
  if (cfg.n < 2 || cfg.target_n_t < 1 || cfg.target_n_t >= cfg.n)
    throw std::invalid_argument("gen: bad n / target_n_t");

  const CovarianceModel cov =
      gen_covariance(cfg.p, cfg.rho, mix_seed(cfg.seed) + 1);

  std::mt19937_64 rng_beta = make_rng(cfg.seed, 2);
  std::exponential_distribution<double> expo(cfg.beta_rate);
  GenParts parts;
  parts.beta.resize(cfg.p - 5);
  for (int j = 0; j < cfg.p - 5; ++j) parts.beta[j] = expo(rng_beta);

  std::mt19937_64 rng_x = make_rng(cfg.seed, 3);
  parts.x = sample_rows(cov, cfg.n, rng_x);

  std::mt19937_64 rng_eps = make_rng(cfg.seed, 4);
  std::normal_distribution<double> gauss(0.0, 1.0);
  parts.eps.resize(cfg.n);
  for (int i = 0; i < cfg.n; ++i) parts.eps[i] = gauss(rng_eps);

  const Eigen::VectorXd first5 = parts.x.leftCols(5).rowwise().sum();
  const Eigen::VectorXd rest = parts.x.rightCols(cfg.p - 5) * parts.beta;
  parts.outcome_lin = first5 + rest;
  parts.eta = first5 + cfg.kappa * rest;
  return parts;
}

std::pair<ObservationalDataset, SimTruth> assemble(const SimConfig& cfg,
                                                   GenParts parts,
                                                   Eigen::VectorXd y_c,
                                                   std::vector<int> z,
                                                   Eigen::VectorXd p_treat,
                                                   std::vector<int> regime) {
  SimTruth truth;
  truth.y_c = y_c;
  truth.y_t = y_c;  // tau is identically zero
  truth.tau = Eigen::VectorXd::Zero(cfg.n);
  truth.p_treat = std::move(p_treat);
  truth.regime = std::move(regime);
  ObservationalDataset ds =
      make_dataset(std::move(parts.x), std::move(z), std::move(y_c));
  return {std::move(ds), std::move(truth)};
}

}  // namespace

Eigen::MatrixXd CovarianceModel::dense() const {
  return rotation * eigenvalues.asDiagonal() * rotation.transpose();
}

CovarianceModel gen_covariance(int p, double rho, std::uint64_t seed) {
  if (p < 1) throw std::invalid_argument("gen_covariance: p must be >= 1");
  if (rho < 0) throw std::invalid_argument("gen_covariance: rho must be >= 0");
  std::mt19937_64 rng = make_rng(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // sign correction makes Q Haar-distributed
  for (int j = 0; j < p; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);

  CovarianceModel cov;
  cov.rotation = std::move(q);
  cov.eigenvalues.resize(p);
  for (int k = 1; k <= p; ++k) cov.eigenvalues[k - 1] = std::exp(-rho * k);
  return cov;
}

std::pair<ObservationalDataset, SimTruth> gen_linear(const SimConfig& cfg) {
  GenParts parts = gen_parts(cfg);
  const double alpha = calibrate_intercept(
      parts.eta, static_cast<double>(cfg.target_n_t) / cfg.n);

  Eigen::VectorXd p_treat(cfg.n);
  for (int i = 0; i < cfg.n; ++i) p_treat[i] = expit(alpha + parts.eta[i]);

  std::mt19937_64 rng_z = make_rng(cfg.seed, 5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> z(cfg.n);
  for (int i = 0; i < cfg.n; ++i) z[i] = unif(rng_z) < p_treat[i] ? 1 : 0;

  Eigen::VectorXd y_c = parts.outcome_lin + parts.eps;
  return assemble(cfg, std::move(parts), std::move(y_c), std::move(z),
                  std::move(p_treat), {});
}

std::pair<ObservationalDataset, SimTruth> gen_nonlinear(const SimConfig& cfg) {
  GenParts parts = gen_parts(cfg);
  const int n_treatable = 2 * cfg.target_n_t;
  if (n_treatable >= cfg.n)
    throw std::invalid_argument("gen_nonlinear: 2 * target_n_t must be < n");

  std::vector<int> order(cfg.n);
  for (int i = 0; i < cfg.n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (parts.eta[a] != parts.eta[b]) return parts.eta[a] > parts.eta[b];
    return a < b;
  });

  std::vector<int> regime(cfg.n, 0);
  Eigen::VectorXd p_treat = Eigen::VectorXd::Zero(cfg.n);
  for (int r = 0; r < n_treatable; ++r) {
    regime[order[r]] = 1;
    p_treat[order[r]] = 0.5;
  }

  // exactly target_n_t treated, uniformly among the treatable
  std::mt19937_64 rng_z = make_rng(cfg.seed, 6);
  std::vector<int> z(cfg.n, 0);
  for (int pick :
       sample_without_replacement(n_treatable, cfg.target_n_t, rng_z))
    z[order[pick]] = 1;

  const double lin_mean = parts.outcome_lin.mean();
  Eigen::VectorXd y_c(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    y_c[i] = regime[i] == 1 ? lin_mean - parts.outcome_lin[i] + parts.eps[i]
                            : parts.outcome_lin[i] + parts.eps[i];
    y_c[i] = -y_c[i];
  }
  return assemble(cfg, std::move(parts), std::move(y_c), std::move(z),
                  std::move(p_treat), std::move(regime));
}

namespace {

std::vector<int> iota_cols(int k) {
  std::vector<int> cols(k);
  for (int i = 0; i < k; ++i) cols[i] = i;
  return cols;
}

struct OracleFit {
  double mse_m = 0.0;
  double r2_m = 0.0;
};

OracleFit oracle_fit(const SimTruth& truth, const MatchAssignment& m,
                     const Eigen::VectorXd& yhat) {
  const std::vector<int> matched = m.matched_units();
  double sse = 0.0, mean = 0.0;
  for (int i : matched) mean += truth.y_c[i];
  mean /= matched.size();
  double tss = 0.0;
  for (int i : matched) {
    sse += (yhat[i] - truth.y_c[i]) * (yhat[i] - truth.y_c[i]);
    tss += (truth.y_c[i] - mean) * (truth.y_c[i] - mean);
  }
  OracleFit fit;
  fit.mse_m = sse / matched.size();
  fit.r2_m = tss > 0 ? 1.0 - sse / tss : 0.0;
  return fit;
}

struct RepTask {
  double kappa = 0.0, rho = 0.0;
  int replication = 0;
  std::uint64_t seed = 0;
};

LearnerConfig sim_lasso(const StudyConfig& study) {
  LearnerConfig c = LearnerConfig::of(LearnerKind::lasso);
  c.path_points = study.lasso_path;
  return c;
}

LearnerConfig sim_forest(const StudyConfig& study) {
  LearnerConfig c = LearnerConfig::of(LearnerKind::random_forest);
  c.trees = study.rf_trees;
  return c;
}

void run_linear_rep(const StudyConfig& study, const RepTask& task,
                    std::vector<StudyRow>& rows,
                    std::vector<StudyFailure>& failures) {
  SimConfig cfg = study.base;
  cfg.scenario = Scenario::linear;
  cfg.kappa = task.kappa;
  cfg.rho = task.rho;
  cfg.seed = task.seed;

  auto [ds, truth] = gen_linear(cfg);
  const std::vector<int> match_cols = iota_cols(study.n_match_covariates);
  const PropensityModel prop = fit_propensity(ds, match_cols);

  struct Design {
    std::string name;
    MatchAssignment m;
  };
  std::vector<Design> designs;
  designs.push_back({"psm", optimal_match(prop.logits, ds.z,
                                          MatchSpec::pair())});
  designs.push_back({"nn", nearest_neighbor_match(prop.logits, ds.z)});
  designs.push_back(
      {"cem", coarsened_exact_match(ds, match_cols, study.cem_bins)});

  const std::vector<LearnerConfig> library{sim_lasso(study),
                                           sim_forest(study)};
  for (size_t d = 0; d < designs.size(); ++d) {
    const auto& design = designs[d];
    try {
      if (design.m.sets.empty())
        throw std::runtime_error("empty match");
      const RemnantFit fit = fit_remnant_model(
          ds, design.m, library, study.sl_folds, mix_seed(task.seed) + d + 1);
      const OracleFit oracle = oracle_fit(truth, design.m, fit.source.yhat);
      const Eigen::VectorXd e = ds.y - fit.source.yhat;

      auto emit = [&](const std::string& estimator, double value) {
        StudyRow row;
        row.kappa = task.kappa;
        row.rho = task.rho;
        row.replication = task.replication;
        row.design = design.name;
        row.estimator = estimator;
        row.estimate = value;
        row.cv_r2 = fit.ensemble.cv_r2;
        row.mse_m = oracle.mse_m;
        row.r2_m = oracle.r2_m;
        rows.push_back(std::move(row));
      };

      if (design.name == "psm") {
        emit("matching", matching_estimator(ds.y, ds.z, design.m));
        emit("rebar", rebar_estimator(ds.y, ds.z, design.m, fit.source));
      } else if (design.name == "nn") {
        require_remnant_only(fit.source, design.m);
        NnAttOptions plain, adjusted;
        adjusted.adjust = true;
        adjusted.covariate_cols = match_cols;
        emit("matching", nn_att_estimator(ds.y, ds.z, design.m, ds, plain));
        emit("rebar", rebar_estimator(ds.y, ds.z, design.m, fit.source));
        emit("adjusted", nn_att_estimator(ds.y, ds.z, design.m, ds, adjusted));
        emit("adjusted_rebar",
             nn_att_estimator(e, ds.z, design.m, ds, adjusted));
      } else {
        require_remnant_only(fit.source, design.m);
        emit("matching", matching_estimator(ds.y, ds.z, design.m));
        emit("adjusted",
             regression_estimator(ds.y, ds.z, design.m, ds, match_cols)
                 .coefficient);
        emit("adjusted_rebar",
             regression_estimator(e, ds.z, design.m, ds, match_cols)
                 .coefficient);
      }
    } catch (const std::exception& ex) {
      failures.push_back({task.kappa, task.rho, task.replication,
                          design.name + ": " + ex.what()});
    }
  }
}

void run_nonlinear_rep(const StudyConfig& study, const RepTask& task,
                       std::vector<StudyRow>& rows,
                       std::vector<StudyFailure>& failures) {
  SimConfig cfg = study.base;
  cfg.scenario = Scenario::nonlinear;
  cfg.kappa = task.kappa;
  cfg.rho = task.rho;
  cfg.seed = task.seed;

  auto [ds, truth] = gen_nonlinear(cfg);
  const std::vector<int> match_cols = iota_cols(study.n_match_covariates);
  const PropensityModel prop = fit_propensity(ds, match_cols);
  const auto [m, m_big] =
      relax_match(prop.logits, ds.z, MatchSpec::pair(),
                  MatchSpec::ratio(study.relax_max_controls));

  auto emit = [&](const std::string& estimator, double value, double cv_r2,
                  const OracleFit& oracle, int pv_flag) {
    StudyRow row;
    row.kappa = task.kappa;
    row.rho = task.rho;
    row.replication = task.replication;
    row.design = "psm";
    row.estimator = estimator;
    row.estimate = value;
    row.cv_r2 = cv_r2;
    row.mse_m = oracle.mse_m;
    row.r2_m = oracle.r2_m;
    row.pv_flag = pv_flag;
    rows.push_back(std::move(row));
  };

  emit("matching", matching_estimator(ds.y, ds.z, m), 0.0, OracleFit{}, -1);

  const std::vector<std::pair<std::string, LearnerConfig>> algos{
      {"lasso", sim_lasso(study)}, {"rf", sim_forest(study)}};
  for (size_t a = 0; a < algos.size(); ++a) {
    try {
      const std::vector<LearnerConfig> library{algos[a].second};
      const RemnantFit fit = fit_remnant_model(ds, m, library, study.sl_folds,
                                               mix_seed(task.seed) + a + 1);
      const OracleFit oracle = oracle_fit(truth, m, fit.source.yhat);
      const ProximalValidationReport pv = proximal_validation(
          ds, m, m_big, library, study.sl_folds, mix_seed(task.seed) + 77 + a,
          study.pv_flag_ratio);
      emit("rebar_" + algos[a].first,
           rebar_estimator(ds.y, ds.z, m, fit.source), fit.ensemble.cv_r2,
           oracle, pv.flag ? 1 : 0);
    } catch (const std::exception& ex) {
      failures.push_back({task.kappa, task.rho, task.replication,
                          "rebar_" + algos[a].first + ": " + ex.what()});
    }
  }
}

}  // namespace

std::string scenario_name(Scenario s) {
  return s == Scenario::linear ? "linear" : "nonlinear";
}

StudyResults run_study(const StudyConfig& cfg) {
  std::vector<RepTask> tasks;
  std::uint64_t cell = 0;
  for (double kappa : cfg.kappas)
    for (double rho : cfg.rhos) {
      for (int r = 0; r < cfg.n_runs; ++r) {
        RepTask task;
        task.kappa = kappa;
        task.rho = rho;
        task.replication = r;
        task.seed = mix_seed(cfg.seed) +
                    cell * static_cast<std::uint64_t>(cfg.n_runs) + r;
        tasks.push_back(task);
      }
      ++cell;
    }

  std::vector<std::vector<StudyRow>> task_rows(tasks.size());
  std::vector<std::vector<StudyFailure>> task_failures(tasks.size());

  const int threads =
      cfg.threads > 0 ? cfg.threads
                      : std::max(1u, std::thread::hardware_concurrency());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      const size_t t = next.fetch_add(1);
      if (t >= tasks.size()) break;
      try {
        if (cfg.scenario == Scenario::linear)
          run_linear_rep(cfg, tasks[t], task_rows[t], task_failures[t]);
        else
          run_nonlinear_rep(cfg, tasks[t], task_rows[t], task_failures[t]);
      } catch (const std::exception& ex) {
        task_failures[t].push_back({tasks[t].kappa, tasks[t].rho,
                                    tasks[t].replication, ex.what()});
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  StudyResults results;
  results.config = cfg;
  for (size_t t = 0; t < tasks.size(); ++t) {
    for (auto& r : task_rows[t]) results.rows.push_back(std::move(r));
    for (auto& f : task_failures[t]) results.failures.push_back(std::move(f));
  }
  return results;
}

std::vector<StudySummaryRow> StudyResults::summarize() const {
  std::map<std::tuple<double, double, std::string, std::string>,
           std::vector<const StudyRow*>>
      groups;
  for (const auto& row : rows)
    groups[{row.kappa, row.rho, row.design, row.estimator}].push_back(&row);

  std::vector<StudySummaryRow> out;
  for (const auto& [key, members] : groups) {
    StudySummaryRow s;
    std::tie(s.kappa, s.rho, s.design, s.estimator) = key;
    s.n_ok = static_cast<int>(members.size());
    double mean = 0.0, sq = 0.0, cv = 0.0;
    int flags = 0, flagged = 0;
    for (const auto* r : members) {
      mean += r->estimate;
      sq += r->estimate * r->estimate;
      cv += r->cv_r2;
      if (r->pv_flag >= 0) {
        ++flags;
        flagged += r->pv_flag;
      }
    }
    mean /= s.n_ok;
    s.bias = mean;  // true effect is zero by construction
    const double var =
        s.n_ok > 1 ? (sq - s.n_ok * mean * mean) / (s.n_ok - 1) : 0.0;
    s.sd = std::sqrt(std::max(var, 0.0));
    s.rmse = std::sqrt(sq / s.n_ok);
    s.mc_se = s.n_ok > 0 ? s.sd / std::sqrt(double(s.n_ok)) : 0.0;
    s.mean_cv_r2 = cv / s.n_ok;
    s.pv_flag_rate = flags > 0 ? double(flagged) / flags : -1.0;
    out.push_back(std::move(s));
  }
  return out;
}

void write_results_csv(const std::string& path, const StudyResults& results) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "scenario,kappa,rho,replication,design,estimator,estimate,cv_r2,"
         "mse_m,r2_m,pv_flag\n";
  char buf[256];
  for (const auto& r : results.rows) {
    std::snprintf(buf, sizeof(buf),
                  "%s,%.17g,%.17g,%d,%s,%s,%.17g,%.17g,%.17g,%.17g,%d\n",
                  scenario_name(results.config.scenario).c_str(), r.kappa,
                  r.rho, r.replication, r.design.c_str(), r.estimator.c_str(),
                  r.estimate, r.cv_r2, r.mse_m, r.r2_m, r.pv_flag);
    out << buf;
  }
  std::ofstream fail(path + ".failures.csv");
  fail << "scenario,kappa,rho,replication,error\n";
  for (const auto& f : results.failures)
    fail << scenario_name(results.config.scenario) << "," << f.kappa << ","
         << f.rho << "," << f.replication << ",\"" << f.what << "\"\n";
}

void write_summary_csv(const std::string& path, const StudyResults& results) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << "scenario,kappa,rho,design,estimator,n,bias,sd,rmse,mc_se,"
         "mean_cv_r2,pv_flag_rate\n";
  char buf[320];
  for (const auto& s : results.summarize()) {
    std::snprintf(buf, sizeof(buf),
                  "%s,%.17g,%.17g,%s,%s,%d,%.10g,%.10g,%.10g,%.10g,%.10g,"
                  "%.10g\n",
                  scenario_name(results.config.scenario).c_str(), s.kappa,
                  s.rho, s.design.c_str(), s.estimator.c_str(), s.n_ok, s.bias,
                  s.sd, s.rmse, s.mc_se, s.mean_cv_r2, s.pv_flag_rate);
    out << buf;
  }
}

void write_manifest_json(const std::string& path, const StudyConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = scenario_name(cfg.scenario);
  j["n"] = cfg.base.n;
  j["p"] = cfg.base.p;
  j["target_n_t"] = cfg.base.target_n_t;
  j["beta_rate"] = cfg.base.beta_rate;
  j["kappa"] = cfg.kappas;
  j["rho"] = cfg.rhos;
  j["runs"] = cfg.n_runs;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["sl_folds"] = cfg.sl_folds;
  j["cem_bins"] = cfg.cem_bins;
  j["n_match_covariates"] = cfg.n_match_covariates;
  j["rf_trees"] = cfg.rf_trees;
  j["lasso_path"] = cfg.lasso_path;
  j["relax_max_controls"] = cfg.relax_max_controls;
  j["pv_flag_ratio"] = cfg.pv_flag_ratio;
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace rebar
