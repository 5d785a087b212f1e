#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "rebar/dataset.hpp"
#include "rebar/learners.hpp"

namespace rebar {

struct LeakageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raises LeakageError unless the prediction source was fitted without
// reading any matched-sample row.
void require_remnant_only(const PredictionSource& source,
                          const MatchAssignment& m);

// Weighted within-set mean difference: sum_m (n_Tm/n_T) * (mean Y treated -
// mean Y control in set m).
double matching_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                          const MatchAssignment& m);

// matching_estimator on e = Y - yhat. Verifies the leakage guard and the
// identity tau_rebar = tau_M(Y) - tau_M(yhat) to 1e-10.
double rebar_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                       const MatchAssignment& m,
                       const PredictionSource& source);

// ATT form for nearest-neighbour matches: mean over treated of the gap to
// their matched controls, with reuse weighted by multiplicity. When adjust
// is set, an OLS outcome model on the matching covariates (fit among the
// distinct matched controls) corrects each gap by mu(x_t) - mean mu(x_c).
struct NnAttOptions {
  bool adjust = false;
  std::vector<int> covariate_cols;  // matching covariates; adjust only
};
double nn_att_estimator(const Eigen::VectorXd& y, const std::vector<int>& z,
                        const MatchAssignment& m,
                        const ObservationalDataset& ds,
                        const NnAttOptions& options);

struct RegressionEstimate {
  double coefficient = 0.0;  // on Z
  double hc3_se = 0.0;
  bool ridge_fallback = false;  // rank-deficient design was regularized
};

// Coefficient on Z from weighted least squares of the outcome on
// (intercept, matching covariates, Z) in the matched sample: treated rows
// weigh 1, controls in set m weigh n_Tm/n_Cm: with no covariates this
// reproduces the matching estimator. SE is the HC3 sandwich.
RegressionEstimate regression_estimator(const Eigen::VectorXd& outcome,
                                        const std::vector<int>& z,
                                        const MatchAssignment& m,
                                        const ObservationalDataset& ds,
                                        const std::vector<int>& covariate_cols);

}  // namespace rebar
