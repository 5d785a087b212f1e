#include "rebar/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rebar {
namespace {

// Arm classification always follows the z argument, not the stored lists:
// permutation tests reassign treatment within sets and recompute.
struct SetStats {
  double sum_t = 0.0, sum_c = 0.0;
  int n_t = 0, n_c = 0;
};

SetStats set_stats(const Eigen::VectorXd& y, const std::vector<int>& z,
                   const MatchedSet& s) {
  SetStats st;
  auto add = [&](int i) {
    if (z[i] == 1) {
      st.sum_t += y[i];
      ++st.n_t;
    } else {
      st.sum_c += y[i];
      ++st.n_c;
    }
  };
  for (int i : s.treated) add(i);
  for (int i : s.controls) add(i);
  return st;
}

Eigen::MatrixXd design_with_intercept(const ObservationalDataset& ds,
                                      const std::vector<int>& rows,
                                      const std::vector<int>& cols) {
  Eigen::MatrixXd x(rows.size(), cols.size() + 1);
  x.col(0).setOnes();
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j)
      x(i, j + 1) = ds.x(rows[i], cols[j]);
  return x;
}

}  // namespace

void require_remnant_only(const PredictionSource& source,
                          const MatchAssignment& m) {
  if (source.yhat.size() == 0)
    throw LeakageError("predictions carry no provenance");
  const std::vector<int> matched = m.matched_units();
  std::set<int> trained(source.trained_rows.begin(),
                        source.trained_rows.end());
  for (int i : matched)
    if (trained.count(i))
      throw LeakageError(
          "leakage guard: prediction model was fitted on matched-sample rows");
}

double matching_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                          const MatchAssignment& m) {
  if (m.sets.empty()) throw std::invalid_argument("empty match");
  double n_t = 0.0;
  for (const auto& s : m.sets) {
    int c = 0;
    for (int i : s.treated) c += z[i];
    for (int i : s.controls) c += z[i];
    n_t += c;
  }
  double tau = 0.0;
  for (const auto& s : m.sets) {
    const SetStats st = set_stats(y, z, s);
    if (st.n_t == 0 || st.n_c == 0)
      throw std::invalid_argument(
          "matching_estimator: set with a single arm under this assignment");
    tau += (st.n_t / n_t) * (st.sum_t / st.n_t - st.sum_c / st.n_c);
  }
  return tau;
}

double rebar_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                       const MatchAssignment& m,
                       const PredictionSource& source) {
  require_remnant_only(source, m);
  const Eigen::VectorXd e = y - source.yhat;
  const double tau = matching_estimator(e, z, m);
  const double two_pass = matching_estimator(y, z, m) -
                          matching_estimator(source.yhat, z, m);
  if (std::abs(tau - two_pass) > 1e-10)
    throw std::logic_error("rebar decomposition identity violated");
  return tau;
}

double nn_att_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                        const MatchAssignment& m,
                        const ObservationalDataset& ds,
                        const NnAttOptions& options) {
  if (m.sets.empty()) throw std::invalid_argument("empty match");

  std::vector<int> set_treated(m.sets.size(), -1);
  std::vector<std::vector<int>> set_controls(m.sets.size());
  for (size_t s = 0; s < m.sets.size(); ++s) {
    auto classify = [&](int i) {
      if (z[i] == 1) {
        if (set_treated[s] >= 0)
          throw std::invalid_argument(
              "nn_att_estimator: expects one treated unit per set");
        set_treated[s] = i;
      } else {
        set_controls[s].push_back(i);
      }
    };
    for (int i : m.sets[s].treated) classify(i);
    for (int i : m.sets[s].controls) classify(i);
    if (set_treated[s] < 0 || set_controls[s].empty())
      throw std::invalid_argument("nn_att_estimator: single-armed set");
  }

  Eigen::VectorXd mu;
  if (options.adjust) {
    std::set<int> control_set;
    for (const auto& cs : set_controls)
      control_set.insert(cs.begin(), cs.end());
    const std::vector<int> controls(control_set.begin(), control_set.end());
    const Eigen::MatrixXd xc =
        design_with_intercept(ds, controls, options.covariate_cols);
    Eigen::VectorXd yc(controls.size());
    for (size_t i = 0; i < controls.size(); ++i) yc[i] = y[controls[i]];

    Eigen::MatrixXd gram = xc.transpose() * xc;
    const Eigen::VectorXd rhs = xc.transpose() * yc;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    Eigen::VectorXd beta;
    if (lu.isInvertible()) {
      beta = lu.solve(rhs);
    } else {
      // singular outcome-model design: tiny ridge keeps the fit defined
      gram.diagonal().array() += 1e-8 * (gram.trace() / gram.rows() + 1.0);
      beta = gram.ldlt().solve(rhs);
    }
    std::vector<int> all_rows(ds.n());
    for (int i = 0; i < ds.n(); ++i) all_rows[i] = i;
    mu = design_with_intercept(ds, all_rows, options.covariate_cols) * beta;
  }

  double total = 0.0;
  for (size_t s = 0; s < m.sets.size(); ++s) {
    const int t = set_treated[s];
    const auto& cs = set_controls[s];
    double cbar = 0.0, mubar = 0.0;
    for (int c : cs) {
      cbar += y[c];
      if (options.adjust) mubar += mu[c];
    }
    double gap = y[t] - cbar / cs.size();
    if (options.adjust) gap -= mu[t] - mubar / cs.size();
    total += gap;
  }
  return total / m.sets.size();
}

RegressionEstimate regression_estimator(
    const Eigen::VectorXd& outcome, const std::vector<int>& z,
    const MatchAssignment& m, const ObservationalDataset& ds,
    const std::vector<int>& covariate_cols) {
  if (m.sets.empty()) throw std::invalid_argument("empty match");

  std::vector<int> rows;
  std::vector<double> weights;
  for (const auto& s : m.sets) {
    int n_t = 0, n_c = 0;
    auto count = [&](int i) { (z[i] == 1 ? n_t : n_c) += 1; };
    for (int i : s.treated) count(i);
    for (int i : s.controls) count(i);
    if (n_t == 0 || n_c == 0)
      throw std::invalid_argument("regression_estimator: single-armed set");
    const double cw = static_cast<double>(n_t) / n_c;
    auto push = [&](int i) {
      rows.push_back(i);
      weights.push_back(z[i] == 1 ? 1.0 : cw);
    };
    for (int i : s.treated) push(i);
    for (int i : s.controls) push(i);
  }
  const int n = static_cast<int>(rows.size());
  const int k = static_cast<int>(covariate_cols.size());

  Eigen::MatrixXd x(n, k + 2);
  Eigen::VectorXd yv(n), w(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int j = 0; j < k; ++j) x(i, j + 1) = ds.x(rows[i], covariate_cols[j]);
    x(i, k + 1) = z[rows[i]];
    yv[i] = outcome[rows[i]];
    w[i] = weights[i];
  }

  RegressionEstimate out;
  Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
  const Eigen::VectorXd rhs = x.transpose() * w.cwiseProduct(yv);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  if (!lu.isInvertible()) {
    gram.diagonal().tail(k + 1).array() +=
        1e-8 * (gram.trace() / gram.rows() + 1.0);
    out.ridge_fallback = true;
    lu.compute(gram);
  }
  const Eigen::MatrixXd gram_inv = lu.inverse();
  const Eigen::VectorXd beta = gram_inv * rhs;
  const Eigen::VectorXd resid = yv - x * beta;

  // HC3: leverage-adjusted squared residuals r_i^2 / (1 - h_ii)^2
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k + 2, k + 2);
  for (int i = 0; i < n; ++i) {
    const double h = w[i] * x.row(i) * gram_inv * x.row(i).transpose();
    const double denom = std::max(1.0 - h, 1e-12);
    const double s = w[i] * resid[i] / denom;
    meat += s * s * x.row(i).transpose() * x.row(i);
  }
  const Eigen::MatrixXd cov = gram_inv * meat * gram_inv;
  out.coefficient = beta[k + 1];
  out.hc3_se = std::sqrt(std::max(cov(k + 1, k + 1), 0.0));
  return out;
}

}  // namespace rebar
