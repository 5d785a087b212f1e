#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rebar/dataset.hpp"

namespace rebar {

// Ridge penalty matching independent Gaussian priors of scale 2.5 on
// standardized coefficients: lambda = 1 / 2.5^2.
inline constexpr double kDefaultPropensityPenalty = 0.16;

struct PropensityModel {
  Eigen::VectorXd coefficients;  // intercept first, original covariate scale
  Eigen::VectorXd logits;        // linear predictor per unit
  double penalty = 0.0;
  int iterations = 0;

  Eigen::VectorXd probabilities() const;
};

// Penalized logistic regression of Z on the selected covariate columns,
// fitted by IRLS with step-halving. The intercept is never penalized.
// Throws on non-convergence (including separation with penalty == 0).
PropensityModel fit_propensity(const ObservationalDataset& ds,
                               const std::vector<int>& covariate_cols,
                               double penalty = kDefaultPropensityPenalty,
                               bool standardize = true, int max_iter = 100,
                               double grad_tol = 1e-8);

}  // namespace rebar
