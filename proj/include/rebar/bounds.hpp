#pragma once

#include <optional>

#include "rebar/dataset.hpp"

namespace rebar {

struct BiasBound {
  double c_constant = 0.0;             // C(n, n_T, n_C); 4 for pair designs
  std::optional<double> gamma;
  double multiplier = 0.0;             // factor actually applied to MSE_M
  double mse_input = 0.0;
  std::optional<double> sd_yc;
  double bound_abs_bias = 0.0;         // sqrt(MSE_M * multiplier)
  std::optional<double> bound_standardized;  // on |bias| / SD(y_C)
};

// Design constant (n / n_T^2) * sum_m (n_Cm + n_Tm) * max(1, n_Tm/n_Cm)^2,
// with n the number of matched units.
double bound_constant(const MatchAssignment& m);

// 4 * (sqrt(gamma) - 1) / (sqrt(gamma) + 1); 0 at gamma = 1, -> 4 as
// gamma -> infinity. Requires gamma >= 1.
double gamma_multiplier(double gamma);

bool is_pair_design(const MatchAssignment& m);

// Bias bound for the rebar estimator given an assumed (or oracle) MSE_M.
// The gamma form applies to pair designs only.
BiasBound bias_bound(const MatchAssignment& m, double mse_m,
                     std::optional<double> sd_yc = std::nullopt,
                     std::optional<double> gamma = std::nullopt);

}  // namespace rebar
