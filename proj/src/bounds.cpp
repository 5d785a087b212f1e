#include "rebar/bounds.hpp"

#include <cmath>
#include <stdexcept>

namespace rebar {

double bound_constant(const MatchAssignment& m) {
  if (m.sets.empty()) throw std::invalid_argument("bound_constant: empty match");
  double n = 0.0, n_t = 0.0;
  for (const auto& s : m.sets) {
    n += s.n_treated() + s.n_controls();
    n_t += s.n_treated();
  }
  double sum = 0.0;
  for (const auto& s : m.sets) {
    const double ratio =
        std::max(1.0, static_cast<double>(s.n_treated()) / s.n_controls());
    sum += (s.n_controls() + s.n_treated()) * ratio * ratio;
  }
  return n / (n_t * n_t) * sum;
}

double gamma_multiplier(double gamma) {
  if (gamma < 1.0)
    throw std::invalid_argument("gamma_multiplier: gamma must be >= 1");
  const double root = std::sqrt(gamma);
  return 4.0 * (root - 1.0) / (root + 1.0);
}

bool is_pair_design(const MatchAssignment& m) {
  for (const auto& s : m.sets)
    if (s.n_treated() != 1 || s.n_controls() != 1) return false;
  return !m.sets.empty();
}

BiasBound bias_bound(const MatchAssignment& m, double mse_m,
                     std::optional<double> sd_yc,
                     std::optional<double> gamma) {
  if (mse_m < 0) throw std::invalid_argument("bias_bound: MSE_M must be >= 0");
  BiasBound b;
  b.c_constant = bound_constant(m);
  b.mse_input = mse_m;
  b.sd_yc = sd_yc;
  b.gamma = gamma;
  if (gamma) {
    if (!is_pair_design(m))
      throw std::invalid_argument(
          "bias_bound: the gamma form is proven for pair designs only");
    b.multiplier = gamma_multiplier(*gamma);
  } else {
    b.multiplier = b.c_constant;
  }
  b.bound_abs_bias = std::sqrt(mse_m * b.multiplier);
  if (sd_yc && *sd_yc > 0)
    b.bound_standardized =
        std::sqrt(mse_m / (*sd_yc * *sd_yc) * b.multiplier);
  return b;
}

}  // namespace rebar
