#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rebar/dataset.hpp"

namespace rebar {

enum class MatchMethod {
  optimal_pair,
  optimal_ratio,
  nearest_neighbor,
  coarsened_exact,
};

struct MatchSpec {
  MatchMethod method = MatchMethod::optimal_pair;
  int max_controls = 1;             // optimal_ratio only; pair <=> 1
  std::optional<double> caliper;    // on the logit scale
  int bins = 5;                     // coarsened_exact only

  static MatchSpec pair(std::optional<double> caliper = std::nullopt);
  static MatchSpec ratio(int max_controls,
                         std::optional<double> caliper = std::nullopt);
};

struct MatchInfeasibleError : std::runtime_error {
  explicit MatchInfeasibleError(std::vector<int> unmatchable_treated);
  std::vector<int> unmatchable;  // treated indices with no admissible control
};

// Optimal matching without replacement on |logit| distance, solved as
// min-cost flow. Every treated unit receives between 1 and
// spec.max_controls distinct controls; subject to that and the caliper,
// the match uses as many controls as possible and, among those, minimizes
// the total logit distance. Deterministic for fixed inputs.
MatchAssignment optimal_match(const Eigen::VectorXd& logits,
                              const std::vector<int>& z,
                              const MatchSpec& spec);

// Each treated unit takes its nearest control (ties -> lowest index);
// controls may be shared across sets.
MatchAssignment nearest_neighbor_match(const Eigen::VectorXd& logits,
                                       const std::vector<int>& z);

// Equal-width binning of each matching covariate over its observed range;
// units sharing the full bin signature form a set when it contains both
// arms. Treated units in treated-only cells are dropped (flagged).
MatchAssignment coarsened_exact_match(const ObservationalDataset& ds,
                                      const std::vector<int>& covariate_cols,
                                      int bins);

// (base match, relaxed match) on identical inputs; relaxed_spec must not
// tighten the caliper or lower the control cap.
std::pair<MatchAssignment, MatchAssignment> relax_match(
    const Eigen::VectorXd& logits, const std::vector<int>& z,
    const MatchSpec& spec, const MatchSpec& relaxed_spec);

// Sum over sets of the harmonic mean h(n_Tm, n_Cm).
double effective_sample_size(const MatchAssignment& m);

}  // namespace rebar
