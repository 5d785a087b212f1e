#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rebar/dataset.hpp"
#include "rebar/learners.hpp"

namespace rebar {

struct BalanceRow {
  std::string name;
  double std_diff_unmatched = 0.0;
  double std_diff_matched = 0.0;  // NaN when no match was supplied
  double z_unmatched = 0.0;
  double z_matched = 0.0;
};

struct BalanceReport {
  std::vector<BalanceRow> rows;
  double omnibus_p_unmatched = 1.0;
  double omnibus_p_matched = 1.0;  // NaN when no match was supplied
};

// Treated-control mean gaps divided by the full-sample pooled SD; the
// matched version reweights the numerator by w_m and keeps the same
// denominator, so pre/post values are directly comparable.
std::vector<BalanceRow> standardized_differences(
    const ObservationalDataset& ds, const std::vector<int>& covariate_cols,
    const MatchAssignment* m = nullptr);

// Quadratic-form omnibus statistic d' pinv(Sigma) d against its permutation
// distribution: Z is permuted wholesale (unmatched) or within sets
// (matched). Add-one corrected.
double omnibus_balance_test(const ObservationalDataset& ds,
                            const std::vector<int>& covariate_cols,
                            const MatchAssignment* m, int n_perms,
                            std::uint64_t seed);

// Full balance table with permutation z-scores and both omnibus p-values.
BalanceReport balance_report(const ObservationalDataset& ds,
                             const std::vector<int>& covariate_cols,
                             const MatchAssignment& m, int n_perms,
                             std::uint64_t seed);

// Balance on the predictions yhat_C(x) treated as the sole covariate:
// (matched standardized difference, matched permutation p-value).
std::pair<double, double> yhat_balance(const ObservationalDataset& ds,
                                       const MatchAssignment& m,
                                       const PredictionSource& source,
                                       int n_perms, std::uint64_t seed);

struct ProximalValidationReport {
  double cv_mse = 0.0;  // remnant-wide cross-validation
  double cv_r2 = 0.0;
  double pv_mse = 0.0;  // distal-trained, proximal-tested
  double pv_r2 = 0.0;
  int n_distal = 0;
  int n_proximal = 0;
  bool flag = false;  // fires when pv_mse > flag_ratio * cv_mse
};

// Refits the ensemble on the distal remnant (units unmatched even under the
// relaxed match) and scores it on the proximal remnant. Reads outcomes of
// remnant units only.
ProximalValidationReport proximal_validation(
    const ObservationalDataset& ds, const MatchAssignment& m,
    const MatchAssignment& m_big, const std::vector<LearnerConfig>& library,
    int k_folds, std::uint64_t seed, double flag_ratio = 1.25);

}  // namespace rebar
