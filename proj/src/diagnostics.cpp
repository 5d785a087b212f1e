#include "rebar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "rebar/rng.hpp"

namespace rebar {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Unmatched mean differences over the full sample.
Eigen::VectorXd unmatched_gaps(const Eigen::MatrixXd& f,
                               const std::vector<int>& z) {
  const int k = static_cast<int>(f.cols());
  Eigen::VectorXd mt = Eigen::VectorXd::Zero(k), mc = Eigen::VectorXd::Zero(k);
  int nt = 0, nc = 0;
  for (int i = 0; i < f.rows(); ++i) {
    if (z[i] == 1) {
      mt += f.row(i);
      ++nt;
    } else {
      mc += f.row(i);
      ++nc;
    }
  }
  return mt / nt - mc / nc;
}

// Weighted within-set mean differences, weights w_m = n_Tm / n_T; arm
// membership follows the z argument so permuted labels work unchanged.
Eigen::VectorXd matched_gaps(const Eigen::MatrixXd& f,
                             const std::vector<int>& z,
                             const MatchAssignment& m) {
  const int k = static_cast<int>(f.cols());
  const double n_t = m.n_treated_total();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
  for (const auto& s : m.sets) {
    Eigen::VectorXd mt = Eigen::VectorXd::Zero(k),
                    mc = Eigen::VectorXd::Zero(k);
    int nt = 0, nc = 0;
    auto add = [&](int i) {
      if (z[i] == 1) {
        mt += f.row(i);
        ++nt;
      } else {
        mc += f.row(i);
        ++nc;
      }
    };
    for (int i : s.treated) add(i);
    for (int i : s.controls) add(i);
    if (nt == 0 || nc == 0) continue;
    d += (s.n_treated() / n_t) * (mt / nt - mc / nc);
  }
  return d;
}

struct PermutedGaps {
  Eigen::VectorXd observed;
  Eigen::MatrixXd draws;  // n_perms x k
};

PermutedGaps permuted_gaps(const Eigen::MatrixXd& f, const std::vector<int>& z,
                           const MatchAssignment* m, int n_perms,
                           std::uint64_t seed) {
  const int n = static_cast<int>(f.rows());
  PermutedGaps out;
  out.draws.resize(n_perms, f.cols());
  if (m == nullptr) {
    out.observed = unmatched_gaps(f, z);
    int nt = 0;
    for (int zi : z) nt += zi;
    for (int r = 0; r < n_perms; ++r) {
      std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(r) + 1);
      std::vector<int> zs(n, 0);
      for (int i : sample_without_replacement(n, nt, rng)) zs[i] = 1;
      out.draws.row(r) = unmatched_gaps(f, zs);
    }
  } else {
    out.observed = matched_gaps(f, z, *m);
    std::vector<std::vector<int>> members;
    for (const auto& s : m->sets) {
      std::vector<int> v = s.treated;
      v.insert(v.end(), s.controls.begin(), s.controls.end());
      members.push_back(std::move(v));
    }
    std::vector<int> zs = z;
    for (int r = 0; r < n_perms; ++r) {
      std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(r) + 1);
      for (size_t s = 0; s < m->sets.size(); ++s) {
        for (int i : members[s]) zs[i] = 0;
        for (int c : sample_without_replacement(
                 static_cast<int>(members[s].size()), m->sets[s].n_treated(),
                 rng))
          zs[members[s][c]] = 1;
      }
      out.draws.row(r) = matched_gaps(f, zs, *m);
    }
  }
  return out;
}

// p-value of d' pinv(Sigma) d with Sigma estimated from the permutation
// draws; singular directions below 1e-10 * max eigenvalue are truncated.
double omnibus_p(const PermutedGaps& g) {
  const int r = static_cast<int>(g.draws.rows());
  const Eigen::MatrixXd sigma = g.draws.transpose() * g.draws / r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  const double cutoff = 1e-10 * std::max(es.eigenvalues().maxCoeff(), 0.0);
  Eigen::VectorXd inv = es.eigenvalues();
  for (int i = 0; i < inv.size(); ++i)
    inv[i] = inv[i] > cutoff && inv[i] > 0 ? 1.0 / inv[i] : 0.0;
  const Eigen::MatrixXd pinv =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  const double q_obs = g.observed.dot(pinv * g.observed);
  int at_least = 0;
  for (int i = 0; i < r; ++i) {
    const Eigen::VectorXd d = g.draws.row(i);
    if (d.dot(pinv * d) >= q_obs) ++at_least;
  }
  return (at_least + 1.0) / (r + 1.0);
}

Eigen::MatrixXd feature_matrix(const ObservationalDataset& ds,
                               const std::vector<int>& cols) {
  Eigen::MatrixXd f(ds.n(), cols.size());
  for (size_t j = 0; j < cols.size(); ++j) f.col(j) = ds.x.col(cols[j]);
  return f;
}

double pooled_sd(const Eigen::VectorXd& col, const std::vector<int>& z) {
  double st = 0.0, sc = 0.0, mt = 0.0, mc = 0.0;
  int nt = 0, nc = 0;
  for (int i = 0; i < col.size(); ++i)
    if (z[i] == 1) {
      mt += col[i];
      ++nt;
    } else {
      mc += col[i];
      ++nc;
    }
  mt /= nt;
  mc /= nc;
  for (int i = 0; i < col.size(); ++i)
    if (z[i] == 1)
      st += (col[i] - mt) * (col[i] - mt);
    else
      sc += (col[i] - mc) * (col[i] - mc);
  st = nt > 1 ? st / (nt - 1) : 0.0;
  sc = nc > 1 ? sc / (nc - 1) : 0.0;
  return std::sqrt(0.5 * (st + sc));
}

}  // namespace

std::vector<BalanceRow> standardized_differences(
    const ObservationalDataset& ds, const std::vector<int>& covariate_cols,
    const MatchAssignment* m) {
  const Eigen::MatrixXd f = feature_matrix(ds, covariate_cols);
  const Eigen::VectorXd d_un = unmatched_gaps(f, ds.z);
  Eigen::VectorXd d_m;
  if (m != nullptr) d_m = matched_gaps(f, ds.z, *m);

  std::vector<BalanceRow> rows;
  for (size_t j = 0; j < covariate_cols.size(); ++j) {
    BalanceRow row;
    row.name = ds.covariate_names[covariate_cols[j]];
    const double sd = pooled_sd(f.col(j), ds.z);
    row.std_diff_unmatched = sd > 0 ? d_un[j] / sd : 0.0;
    row.std_diff_matched = m != nullptr ? (sd > 0 ? d_m[j] / sd : 0.0) : kNaN;
    row.z_unmatched = kNaN;
    row.z_matched = kNaN;
    rows.push_back(std::move(row));
  }
  return rows;
}

double omnibus_balance_test(const ObservationalDataset& ds,
                            const std::vector<int>& covariate_cols,
                            const MatchAssignment* m, int n_perms,
                            std::uint64_t seed) {
  if (n_perms < 100)
    throw std::invalid_argument("omnibus_balance_test: n_perms must be >= 100");
  const Eigen::MatrixXd f = feature_matrix(ds, covariate_cols);
  return omnibus_p(permuted_gaps(f, ds.z, m, n_perms, seed));
}

BalanceReport balance_report(const ObservationalDataset& ds,
                             const std::vector<int>& covariate_cols,
                             const MatchAssignment& m, int n_perms,
                             std::uint64_t seed) {
  const Eigen::MatrixXd f = feature_matrix(ds, covariate_cols);
  const PermutedGaps un = permuted_gaps(f, ds.z, nullptr, n_perms, seed);
  const PermutedGaps ma = permuted_gaps(f, ds.z, &m, n_perms, seed);

  BalanceReport report;
  report.rows = standardized_differences(ds, covariate_cols, &m);
  for (size_t j = 0; j < report.rows.size(); ++j) {
    const double sd_un = std::sqrt(un.draws.col(j).squaredNorm() /
                                   un.draws.rows());
    const double sd_ma = std::sqrt(ma.draws.col(j).squaredNorm() /
                                   ma.draws.rows());
    report.rows[j].z_unmatched = sd_un > 0 ? un.observed[j] / sd_un : 0.0;
    report.rows[j].z_matched = sd_ma > 0 ? ma.observed[j] / sd_ma : 0.0;
  }
  report.omnibus_p_unmatched = omnibus_p(un);
  report.omnibus_p_matched = omnibus_p(ma);
  return report;
}

std::pair<double, double> yhat_balance(const ObservationalDataset& ds,
                                       const MatchAssignment& m,
                                       const PredictionSource& source,
                                       int n_perms, std::uint64_t seed) {
  // the guard lives in estimators, but the precondition is the same:
  // predictions must come from a remnant-only fit
  {
    std::set<int> trained(source.trained_rows.begin(),
                          source.trained_rows.end());
    for (int i : m.matched_units())
      if (trained.count(i))
        throw std::invalid_argument(
            "yhat_balance: predictions were fitted on matched-sample rows");
  }
  const Eigen::MatrixXd f = source.yhat;
  const PermutedGaps g = permuted_gaps(f, ds.z, &m, n_perms, seed);
  const double sd = pooled_sd(f.col(0), ds.z);
  const double std_diff = sd > 0 ? g.observed[0] / sd : 0.0;
  return {std_diff, omnibus_p(g)};
}

ProximalValidationReport proximal_validation(
    const ObservationalDataset& ds, const MatchAssignment& m,
    const MatchAssignment& m_big, const std::vector<LearnerConfig>& library,
    int k_folds, std::uint64_t seed, double flag_ratio) {
  std::set<int> matched_big;
  for (const auto& s : m_big.sets) {
    matched_big.insert(s.treated.begin(), s.treated.end());
    matched_big.insert(s.controls.begin(), s.controls.end());
  }
  std::vector<int> distal, proximal;
  for (int i : m.remnant)
    (matched_big.count(i) ? proximal : distal).push_back(i);
  if (proximal.empty())
    throw std::invalid_argument("proximal_validation: proximal set is empty");
  if (distal.size() < 2)
    throw std::invalid_argument("proximal_validation: distal set too small");

  auto gather = [&](const std::vector<int>& rows, Eigen::MatrixXd& x,
                    Eigen::VectorXd& y) {
    x.resize(rows.size(), ds.p());
    y.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      x.row(i) = ds.x.row(rows[i]);
      y[i] = ds.y[rows[i]];
    }
  };

  ProximalValidationReport report;
  report.n_distal = static_cast<int>(distal.size());
  report.n_proximal = static_cast<int>(proximal.size());

  Eigen::MatrixXd x_rem, x_dist, x_prox;
  Eigen::VectorXd y_rem, y_dist, y_prox;
  gather(m.remnant, x_rem, y_rem);
  gather(distal, x_dist, y_dist);
  gather(proximal, x_prox, y_prox);

  const int k_rem = std::min<int>(k_folds, static_cast<int>(m.remnant.size()));
  const LearnerEnsemble full =
      super_learner(library, x_rem, y_rem, k_rem, seed);
  report.cv_mse = full.cv_mse;
  report.cv_r2 = full.cv_r2;

  const int k_dist = std::min<int>(k_folds, report.n_distal);
  const LearnerEnsemble dist =
      super_learner(library, x_dist, y_dist, std::max(2, k_dist), seed + 1);
  const Eigen::VectorXd pred = dist.predict(x_prox);
  report.pv_mse = (y_prox - pred).squaredNorm() / y_prox.size();
  const double var =
      (y_prox.array() - y_prox.mean()).square().sum() / y_prox.size();
  report.pv_r2 = var > 0 ? 1.0 - report.pv_mse / var : 0.0;
  report.flag = report.pv_mse > flag_ratio * report.cv_mse;
  return report;
}

}  // namespace rebar
